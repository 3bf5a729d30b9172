#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "expanet/errors.hpp"
#include "expanet/matrix.hpp"
#include "expanet/model.hpp"
#include "expanet/recording.hpp"

namespace expanet {

namespace io {

constexpr int kModelFormatVersion = 1;

inline std::filesystem::path blob_path_for(const std::filesystem::path& header,
                                           const char* ext) {
  std::filesystem::path p = header;
  p.replace_extension(ext);
  return p;
}

inline void write_bytes(const std::filesystem::path& path, const void* data,
                        size_t size) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + path.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!f) throw IoFailure("short write: " + path.string());
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoFailure("cannot open for reading: " + path.string());
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<size_t>(size));
  if (size > 0) f.read(buf.data(), size);
  if (!f) throw IoFailure("short read: " + path.string());
  return buf;
}

// FNV-1a over raw bytes; used to fingerprint stage artifacts.
inline uint64_t fnv1a(const void* data, size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return fnv1a(bytes.data(), bytes.size());
}

}  // namespace io

// Header JSON next to a raw little-endian float32 blob, row-major [channel][sample].
inline void save_recording(const Recording& rec, const std::filesystem::path& json_path) {
  const std::filesystem::path blob = io::blob_path_for(json_path, ".f32");
  nlohmann::json h;
  h["subject_id"] = rec.subject_id;
  h["label"] = label_name(rec.label);
  h["sample_rate_hz"] = rec.sample_rate_hz;
  h["channel_names"] = rec.channel_names;
  h["n_samples"] = rec.data.cols;
  h["dtype"] = "f32le";
  h["data_file"] = blob.filename().string();

  std::vector<float> f32(rec.data.data.size());
  for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(rec.data.data[i]);
  io::write_bytes(blob, f32.data(), f32.size() * sizeof(float));

  std::ofstream jf(json_path, std::ios::trunc);
  if (!jf) throw IoFailure("cannot open for writing: " + json_path.string());
  jf << h.dump(2) << "\n";
}

inline Recording load_recording(const std::filesystem::path& json_path) {
  nlohmann::json h;
  {
    std::ifstream jf(json_path);
    if (!jf) throw IoFailure("cannot open recording header: " + json_path.string());
    try {
      jf >> h;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptHeader(json_path.string() + ": " + e.what());
    }
  }

  Recording raw;
  try {
    raw.subject_id = h.at("subject_id").get<std::string>();
    const auto& lab = h.at("label");
    if (lab.is_string())
      raw.label = lab.get<std::string>() == "MDD" ? Label::MDD : Label::HC;
    else
      raw.label = lab.get<int>() != 0 ? Label::MDD : Label::HC;
    raw.sample_rate_hz = h.at("sample_rate_hz").get<double>();
    raw.channel_names = h.at("channel_names").get<std::vector<std::string>>();
    if (h.at("dtype").get<std::string>() != "f32le")
      throw CorruptHeader(json_path.string() + ": unsupported dtype");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(json_path.string() + ": " + e.what());
  }
  const int n_samples = h.at("n_samples").get<int>();
  const int n_channels = static_cast<int>(raw.channel_names.size());
  if (n_samples < 1 || n_channels < 1)
    throw CorruptHeader(json_path.string() + ": empty data declared");

  if (raw.sample_rate_hz <= 140.0)
    throw SampleRateTooLow(json_path.string() + ": sample_rate_hz " +
                           std::to_string(raw.sample_rate_hz) +
                           " cannot carry the 70 Hz band edge");
  if (n_samples < 5.0 * raw.sample_rate_hz)
    throw CorruptHeader(json_path.string() + ": fewer samples than one 5 s epoch");

  const std::filesystem::path blob =
      json_path.parent_path() / h.at("data_file").get<std::string>();
  const auto bytes = io::read_bytes(blob);
  const size_t want = static_cast<size_t>(n_channels) * n_samples * sizeof(float);
  if (bytes.size() != want)
    throw CorruptHeader(blob.string() + ": expected " + std::to_string(want) +
                        " bytes, found " + std::to_string(bytes.size()));

  raw.data = Matrix(n_channels, n_samples);
  const float* f32 = reinterpret_cast<const float*>(bytes.data());
  for (size_t i = 0; i < raw.data.data.size(); ++i)
    raw.data.data[i] = static_cast<double>(f32[i]);

  // Project onto the canonical montage; surplus channels are dropped.
  Recording rec;
  rec.subject_id = raw.subject_id;
  rec.label = raw.label;
  rec.sample_rate_hz = raw.sample_rate_hz;
  rec.data = Matrix(Montage::kNumChannels, n_samples);
  int extras = 0;
  for (const std::string& name : raw.channel_names)
    if (Montage::index_of(name) < 0) ++extras;
  for (int m = 0; m < Montage::kNumChannels; ++m) {
    const std::string& name = Montage::channels()[m];
    int src = -1;
    for (int c = 0; c < n_channels; ++c)
      if (raw.channel_names[c] == name) {
        src = c;
        break;
      }
    if (src < 0) throw MissingChannel(json_path.string() + ": " + name);
    for (int s = 0; s < n_samples; ++s) {
      const double v = raw.data(src, s);
      if (!std::isfinite(v))
        throw NonFiniteSample(json_path.string() + ": channel " + name + " sample " +
                              std::to_string(s));
      rec.data(m, s) = v;
    }
    rec.channel_names.push_back(name);
  }
  if (extras > 0)
    std::cerr << "note: " << json_path.filename().string() << ": dropped " << extras
              << " non-montage channel(s)\n";
  return rec;
}

// Per-column standardization statistics, fit on training data only and shipped
// inside the model file so inference applies the identical transform.
struct FeatureScaler {
  Matrix mean{1, kNumFeatures};
  Matrix std{1, kNumFeatures, 1.0};

  static FeatureScaler fit(const std::vector<const Matrix*>& mats) {
    if (mats.empty()) throw EmptyGroup("FeatureScaler: nothing to fit");
    FeatureScaler s;
    const int cols = mats[0]->cols;
    s.mean = Matrix(1, cols);
    s.std = Matrix(1, cols);
    long long n = 0;
    for (const Matrix* m : mats) n += m->rows;
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (const Matrix* m : mats)
        for (int i = 0; i < m->rows; ++i) acc += (*m)(i, j);
      const double mu = acc / n;
      double var = 0.0;
      for (const Matrix* m : mats)
        for (int i = 0; i < m->rows; ++i) {
          const double d = (*m)(i, j) - mu;
          var += d * d;
        }
      var /= n;
      s.mean(0, j) = mu;
      s.std(0, j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    if (x.cols != mean.cols) throw ShapeMismatch("FeatureScaler: column mismatch");
    Matrix out = x;
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < x.cols; ++j)
        out(i, j) = (x(i, j) - mean(0, j)) / std(0, j);
    return out;
  }
};

// Everything needed to run inference: weights, the feature scaler, and the graph
// sparsity the model was trained with.
struct ModelBundle {
  ModelParams params;
  FeatureScaler scaler;
  int top_k = 5;
};

inline void save_model(const ModelBundle& bundle, const std::filesystem::path& json_path) {
  std::vector<double> blob;
  nlohmann::json tensors = nlohmann::json::array();
  for_each_param(bundle.params, [&](const std::string& name, const Matrix& m) {
    if (!const_cast<Matrix&>(m).all_finite())
      throw NonFinite("save_model: tensor " + name + " has non-finite entries");
    nlohmann::json t;
    t["name"] = name;
    t["rows"] = m.rows;
    t["cols"] = m.cols;
    t["offset"] = blob.size();
    tensors.push_back(t);
    blob.insert(blob.end(), m.data.begin(), m.data.end());
  });

  const ModelConfig& c = bundle.params.cfg;
  nlohmann::json h;
  h["format_version"] = io::kModelFormatVersion;
  h["model"] = "expanet";
  h["config"] = {{"input_dim", c.input_dim},   {"hidden", c.hidden},
                 {"gate_hidden", c.gate_hidden}, {"head", c.head},
                 {"leaky_slope", c.leaky_slope}, {"ln_eps", c.ln_eps},
                 {"dropout", c.dropout}};
  h["top_k"] = bundle.top_k;
  h["scaler"] = {{"mean", bundle.scaler.mean.data}, {"std", bundle.scaler.std.data}};
  h["dtype"] = "f64le";
  h["n_values"] = blob.size();
  const std::filesystem::path blob_file = io::blob_path_for(json_path, ".f64");
  h["data_file"] = blob_file.filename().string();
  h["tensors"] = tensors;

  io::write_bytes(blob_file, blob.data(), blob.size() * sizeof(double));
  h["data_hash"] = io::fnv1a(blob.data(), blob.size() * sizeof(double));

  std::ofstream jf(json_path, std::ios::trunc);
  if (!jf) throw IoFailure("cannot open for writing: " + json_path.string());
  jf << h.dump(2) << "\n";
}

inline ModelBundle load_model(const std::filesystem::path& json_path) {
  nlohmann::json h;
  {
    std::ifstream jf(json_path);
    if (!jf) throw IoFailure("cannot open model header: " + json_path.string());
    try {
      jf >> h;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptHeader(json_path.string() + ": " + e.what());
    }
  }
  try {
    if (h.at("format_version").get<int>() != io::kModelFormatVersion)
      throw VersionMismatch(json_path.string() + ": format_version " +
                            h.at("format_version").dump());
    ModelBundle bundle;
    const auto& c = h.at("config");
    bundle.params.cfg.input_dim = c.at("input_dim").get<int>();
    bundle.params.cfg.hidden = c.at("hidden").get<std::vector<int>>();
    bundle.params.cfg.gate_hidden = c.at("gate_hidden").get<int>();
    bundle.params.cfg.head = c.at("head").get<std::vector<int>>();
    bundle.params.cfg.leaky_slope = c.at("leaky_slope").get<double>();
    bundle.params.cfg.ln_eps = c.at("ln_eps").get<double>();
    bundle.params.cfg.dropout = c.at("dropout").get<double>();
    bundle.top_k = h.at("top_k").get<int>();
    bundle.scaler.mean.data = h.at("scaler").at("mean").get<std::vector<double>>();
    bundle.scaler.std.data = h.at("scaler").at("std").get<std::vector<double>>();
    bundle.scaler.mean.rows = bundle.scaler.std.rows = 1;
    bundle.scaler.mean.cols = static_cast<int>(bundle.scaler.mean.data.size());
    bundle.scaler.std.cols = static_cast<int>(bundle.scaler.std.data.size());

    const std::filesystem::path blob_file =
        json_path.parent_path() / h.at("data_file").get<std::string>();
    const auto bytes = io::read_bytes(blob_file);
    const size_t n_values = h.at("n_values").get<size_t>();
    if (bytes.size() != n_values * sizeof(double))
      throw CorruptHeader(blob_file.string() + ": truncated tensor blob");

    // Materialize with the architecture's expected shapes, then overlay the blob.
    bundle.params = ModelParams::init(bundle.params.cfg, 0);
    std::vector<std::pair<std::string, Matrix*>> slots;
    for_each_param(bundle.params,
                   [&](const std::string& name, Matrix& m) { slots.push_back({name, &m}); });
    const auto& tensors = h.at("tensors");
    if (tensors.size() != slots.size())
      throw DimensionMismatch(json_path.string() + ": expected " +
                              std::to_string(slots.size()) + " tensors, found " +
                              std::to_string(tensors.size()));
    const double* vals = reinterpret_cast<const double*>(bytes.data());
    for (size_t i = 0; i < slots.size(); ++i) {
      const auto& t = tensors[i];
      const std::string name = t.at("name").get<std::string>();
      const int rows = t.at("rows").get<int>();
      const int cols = t.at("cols").get<int>();
      Matrix* m = slots[i].second;
      if (name != slots[i].first || rows != m->rows || cols != m->cols)
        throw DimensionMismatch(json_path.string() + ": tensor " + name + " is " +
                                std::to_string(rows) + "x" + std::to_string(cols) +
                                ", architecture expects " + slots[i].first + " " +
                                std::to_string(m->rows) + "x" + std::to_string(m->cols));
      const size_t off = t.at("offset").get<size_t>();
      if (off + m->data.size() > n_values)
        throw CorruptHeader(json_path.string() + ": tensor " + name + " overruns blob");
      std::memcpy(m->data.data(), vals + off, m->data.size() * sizeof(double));
    }
    if (bundle.scaler.mean.cols != bundle.params.cfg.input_dim)
      throw DimensionMismatch(json_path.string() + ": scaler width " +
                              std::to_string(bundle.scaler.mean.cols) +
                              " != input_dim " +
                              std::to_string(bundle.params.cfg.input_dim));
    return bundle;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(json_path.string() + ": " + e.what());
  }
}

// Graph serialization for the staged pipeline: one manifest + one f64 blob for a
// whole set of graphs.
inline void save_graphs(const std::vector<BrainGraph>& graphs,
                        const std::filesystem::path& json_path) {
  std::vector<double> blob;
  nlohmann::json list = nlohmann::json::array();
  for (const BrainGraph& g : graphs) {
    nlohmann::json jg;
    jg["subject_id"] = g.subject_id;
    jg["segment_index"] = g.segment_index;
    jg["label"] = label_name(g.label);
    jg["n_nodes"] = g.x.rows;
    jg["n_features"] = g.x.cols;
    jg["x_offset"] = blob.size();
    blob.insert(blob.end(), g.x.data.begin(), g.x.data.end());
    nlohmann::json edges = nlohmann::json::array();
    jg["edge_offset"] = blob.size();
    for (const Edge& e : g.edges) {
      edges.push_back({e.i, e.j});
      blob.push_back(e.plv);
    }
    jg["edges"] = edges;
    list.push_back(jg);
  }
  nlohmann::json h;
  h["format_version"] = io::kModelFormatVersion;
  h["kind"] = "brain_graphs";
  h["dtype"] = "f64le";
  h["n_values"] = blob.size();
  const std::filesystem::path blob_file = io::blob_path_for(json_path, ".f64");
  h["data_file"] = blob_file.filename().string();
  h["graphs"] = list;
  io::write_bytes(blob_file, blob.data(), blob.size() * sizeof(double));
  h["data_hash"] = io::fnv1a(blob.data(), blob.size() * sizeof(double));
  std::ofstream jf(json_path, std::ios::trunc);
  if (!jf) throw IoFailure("cannot open for writing: " + json_path.string());
  jf << h.dump() << "\n";
}

inline std::vector<BrainGraph> load_graphs(const std::filesystem::path& json_path) {
  nlohmann::json h;
  {
    std::ifstream jf(json_path);
    if (!jf) throw IoFailure("cannot open graph manifest: " + json_path.string());
    try {
      jf >> h;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptHeader(json_path.string() + ": " + e.what());
    }
  }
  try {
    if (h.at("kind").get<std::string>() != "brain_graphs")
      throw CorruptHeader(json_path.string() + ": not a graph manifest");
    const std::filesystem::path blob_file =
        json_path.parent_path() / h.at("data_file").get<std::string>();
    const auto bytes = io::read_bytes(blob_file);
    const size_t n_values = h.at("n_values").get<size_t>();
    if (bytes.size() != n_values * sizeof(double))
      throw CorruptHeader(blob_file.string() + ": truncated graph blob");
    const double* vals = reinterpret_cast<const double*>(bytes.data());

    std::vector<BrainGraph> out;
    for (const auto& jg : h.at("graphs")) {
      BrainGraph g;
      g.subject_id = jg.at("subject_id").get<std::string>();
      g.segment_index = jg.at("segment_index").get<int>();
      g.label = jg.at("label").get<std::string>() == "MDD" ? Label::MDD : Label::HC;
      const int n = jg.at("n_nodes").get<int>();
      const int f = jg.at("n_features").get<int>();
      const size_t xo = jg.at("x_offset").get<size_t>();
      const size_t eo = jg.at("edge_offset").get<size_t>();
      const auto& edges = jg.at("edges");
      if (xo + static_cast<size_t>(n) * f > n_values ||
          eo + edges.size() > n_values)
        throw CorruptHeader(json_path.string() + ": graph overruns blob");
      g.x = Matrix(n, f);
      std::memcpy(g.x.data.data(), vals + xo, g.x.data.size() * sizeof(double));
      g.adjacency = Matrix(n, n);
      for (size_t k = 0; k < edges.size(); ++k) {
        Edge e;
        e.i = edges[k][0].get<int>();
        e.j = edges[k][1].get<int>();
        e.plv = vals[eo + k];
        if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n)
          throw CorruptHeader(json_path.string() + ": edge index out of range");
        g.edges.push_back(e);
        g.adjacency(e.i, e.j) = e.plv;
        g.adjacency(e.j, e.i) = e.plv;
      }
      out.push_back(std::move(g));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(json_path.string() + ": " + e.what());
  }
}

}  // namespace expanet
