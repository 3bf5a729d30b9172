#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "expanet/connectivity.hpp"
#include "expanet/dsp.hpp"
#include "expanet/eeg_io.hpp"
#include "expanet/explain.hpp"
#include "expanet/features.hpp"
#include "expanet/model.hpp"
#include "expanet/report.hpp"
#include "expanet/trainer.hpp"

namespace expanet {

struct SynthConfig {
  int n_subjects = 40;
  double duration_s = 60.0;
  double sample_rate_hz = 160.0;
  double alpha_hz = 10.0;
  double theta_hz = 6.0;
  double hc_alpha_amp = 2.0;
  double mdd_alpha_amp = 0.3;
  double mdd_theta_amp = 2.0;
  double hc_noise = 0.5;
  double mdd_noise = 0.5;
  double line_hz = 50.0;
  double line_amp = 0.5;
};

struct DspConfig {
  double bp_low_hz = 0.1;
  double bp_high_hz = 70.0;
  double notch_hz = 50.0;
  double notch_q = 30.0;
  double epoch_s = 5.0;
  double overlap = 0.5;
  int fir_taps = 0;  // 0: one-second kernel derived from fs
};

struct PipelineConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path work_dir = "work";
  uint64_t seed = 42;
  SynthConfig synth;
  DspConfig dsp;
  FeatureConfig features;
  int top_k = 5;
  ModelConfig model;
  TrainConfig trainer;
  ExplainConfig explain;
  int explain_segments_per_subject = 4;  // <= 0 explains every segment

  nlohmann::json effective;  // fully-resolved config, hashed into stage manifests
};

namespace pipe_detail {

inline nlohmann::json default_config_json() {
  const PipelineConfig d;
  nlohmann::json j;
  j["paths"] = {{"data_dir", d.data_dir.string()}, {"work_dir", d.work_dir.string()}};
  j["seed"] = d.seed;
  j["synth"] = {{"n_subjects", d.synth.n_subjects},
                {"duration_s", d.synth.duration_s},
                {"sample_rate_hz", d.synth.sample_rate_hz},
                {"alpha_hz", d.synth.alpha_hz},
                {"theta_hz", d.synth.theta_hz},
                {"hc_alpha_amp", d.synth.hc_alpha_amp},
                {"mdd_alpha_amp", d.synth.mdd_alpha_amp},
                {"mdd_theta_amp", d.synth.mdd_theta_amp},
                {"hc_noise", d.synth.hc_noise},
                {"mdd_noise", d.synth.mdd_noise},
                {"line_hz", d.synth.line_hz},
                {"line_amp", d.synth.line_amp}};
  j["dsp"] = {{"bp_low_hz", d.dsp.bp_low_hz},   {"bp_high_hz", d.dsp.bp_high_hz},
              {"notch_hz", d.dsp.notch_hz},     {"notch_q", d.dsp.notch_q},
              {"epoch_s", d.dsp.epoch_s},       {"overlap", d.dsp.overlap},
              {"fir_taps", d.dsp.fir_taps}};
  j["features"] = {{"hfd_kmax", d.features.hfd_kmax},
                   {"dfa_scales", d.features.dfa_scales},
                   {"pe_order", d.features.pe_order},
                   {"pe_delay", d.features.pe_delay}};
  j["graph"] = {{"k", d.top_k}};
  j["model"] = {{"hidden", d.model.hidden},
                {"gate_hidden", d.model.gate_hidden},
                {"head", d.model.head},
                {"leaky_slope", d.model.leaky_slope},
                {"ln_eps", d.model.ln_eps},
                {"dropout", d.model.dropout}};
  j["trainer"] = {{"n_folds", d.trainer.n_folds},
                  {"lr", d.trainer.lr},
                  {"batch_size", d.trainer.batch_size},
                  {"max_epochs", d.trainer.max_epochs},
                  {"patience", d.trainer.patience},
                  {"val_fraction", d.trainer.val_fraction},
                  {"shuffle_labels", d.trainer.shuffle_labels},
                  {"threshold", d.trainer.threshold}};
  j["explain"] = {{"alpha", d.explain.alpha},
                  {"beta", d.explain.beta},
                  {"gamma", d.explain.gamma},
                  {"delta", d.explain.delta},
                  {"eta", d.explain.eta},
                  {"zeta", d.explain.zeta},
                  {"steps", d.explain.steps},
                  {"lr", d.explain.lr},
                  {"directed_masks", d.explain.directed_masks},
                  {"segments_per_subject", d.explain_segments_per_subject}};
  return j;
}

inline void merge_strict(nlohmann::json& base, const nlohmann::json& overlay,
                         const std::string& prefix) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key()))
      throw ConfigInvalid("unknown config key: " + path);
    if (base[it.key()].is_object() && it.value().is_object())
      merge_strict(base[it.key()], it.value(), path);
    else
      base[it.key()] = it.value();
  }
}

}  // namespace pipe_detail

inline PipelineConfig parse_config_json(const nlohmann::json& file_json) {
  nlohmann::json j = pipe_detail::default_config_json();
  pipe_detail::merge_strict(j, file_json, "");

  PipelineConfig c;
  try {
    c.data_dir = j.at("paths").at("data_dir").get<std::string>();
    c.work_dir = j.at("paths").at("work_dir").get<std::string>();
    c.seed = j.at("seed").get<uint64_t>();
    const auto& s = j.at("synth");
    c.synth.n_subjects = s.at("n_subjects").get<int>();
    c.synth.duration_s = s.at("duration_s").get<double>();
    c.synth.sample_rate_hz = s.at("sample_rate_hz").get<double>();
    c.synth.alpha_hz = s.at("alpha_hz").get<double>();
    c.synth.theta_hz = s.at("theta_hz").get<double>();
    c.synth.hc_alpha_amp = s.at("hc_alpha_amp").get<double>();
    c.synth.mdd_alpha_amp = s.at("mdd_alpha_amp").get<double>();
    c.synth.mdd_theta_amp = s.at("mdd_theta_amp").get<double>();
    c.synth.hc_noise = s.at("hc_noise").get<double>();
    c.synth.mdd_noise = s.at("mdd_noise").get<double>();
    c.synth.line_hz = s.at("line_hz").get<double>();
    c.synth.line_amp = s.at("line_amp").get<double>();
    const auto& d = j.at("dsp");
    c.dsp.bp_low_hz = d.at("bp_low_hz").get<double>();
    c.dsp.bp_high_hz = d.at("bp_high_hz").get<double>();
    c.dsp.notch_hz = d.at("notch_hz").get<double>();
    c.dsp.notch_q = d.at("notch_q").get<double>();
    c.dsp.epoch_s = d.at("epoch_s").get<double>();
    c.dsp.overlap = d.at("overlap").get<double>();
    c.dsp.fir_taps = d.at("fir_taps").get<int>();
    const auto& f = j.at("features");
    c.features.hfd_kmax = f.at("hfd_kmax").get<int>();
    c.features.dfa_scales = f.at("dfa_scales").get<std::vector<int>>();
    c.features.pe_order = f.at("pe_order").get<int>();
    c.features.pe_delay = f.at("pe_delay").get<int>();
    c.top_k = j.at("graph").at("k").get<int>();
    const auto& m = j.at("model");
    c.model.hidden = m.at("hidden").get<std::vector<int>>();
    c.model.gate_hidden = m.at("gate_hidden").get<int>();
    c.model.head = m.at("head").get<std::vector<int>>();
    c.model.leaky_slope = m.at("leaky_slope").get<double>();
    c.model.ln_eps = m.at("ln_eps").get<double>();
    c.model.dropout = m.at("dropout").get<double>();
    const auto& t = j.at("trainer");
    c.trainer.n_folds = t.at("n_folds").get<int>();
    c.trainer.lr = t.at("lr").get<double>();
    c.trainer.batch_size = t.at("batch_size").get<int>();
    c.trainer.max_epochs = t.at("max_epochs").get<int>();
    c.trainer.patience = t.at("patience").get<int>();
    c.trainer.val_fraction = t.at("val_fraction").get<double>();
    c.trainer.shuffle_labels = t.at("shuffle_labels").get<bool>();
    c.trainer.threshold = t.at("threshold").get<double>();
    const auto& e = j.at("explain");
    c.explain.alpha = e.at("alpha").get<double>();
    c.explain.beta = e.at("beta").get<double>();
    c.explain.gamma = e.at("gamma").get<double>();
    c.explain.delta = e.at("delta").get<double>();
    c.explain.eta = e.at("eta").get<double>();
    c.explain.zeta = e.at("zeta").get<double>();
    c.explain.steps = e.at("steps").get<int>();
    c.explain.lr = e.at("lr").get<double>();
    c.explain.directed_masks = e.at("directed_masks").get<bool>();
    c.explain_segments_per_subject = e.at("segments_per_subject").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigInvalid(std::string("config: ") + ex.what());
  }

  c.model.validate();
  if (c.synth.n_subjects < 2 || c.synth.n_subjects % 2 != 0)
    throw ConfigInvalid("synth.n_subjects must be even and >= 2");
  if (c.dsp.epoch_s <= 0.0 || c.dsp.overlap < 0.0 || c.dsp.overlap >= 1.0)
    throw ConfigInvalid("dsp: bad epoch/overlap");
  if (c.trainer.batch_size < 1 || c.trainer.max_epochs < 1 || c.trainer.patience < 1)
    throw ConfigInvalid("trainer: bad loop bounds");
  if (c.explain.steps < 1 || c.explain.lr <= 0.0)
    throw ConfigInvalid("explain: bad optimizer settings");
  if (c.top_k < 1 || c.top_k > Montage::kNumChannels - 1)
    throw ConfigInvalid("graph.k out of range");

  c.effective = j;
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigInvalid("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid(path.string() + ": " + e.what());
  }
  return parse_config_json(j);
}

inline uint64_t config_hash(const PipelineConfig& c) {
  const std::string s = c.effective.dump();
  return io::fnv1a(s.data(), s.size());
}

// ---- stage manifests ----

inline std::filesystem::path manifest_path(const PipelineConfig& c,
                                           const std::string& stage) {
  return c.work_dir / (stage + "_manifest.json");
}

inline void write_stage_manifest(const PipelineConfig& c, const std::string& stage,
                                 const std::map<std::string, uint64_t>& outputs) {
  nlohmann::json j;
  j["stage"] = stage;
  j["config_hash"] = config_hash(c);
  nlohmann::json outs;
  for (const auto& [name, hash] : outputs) outs[name] = hash;
  j["outputs"] = outs;
  std::ofstream f(manifest_path(c, stage), std::ios::trunc);
  if (!f) throw IoFailure("cannot write manifest for stage " + stage);
  f << j.dump(2) << "\n";
}

inline void require_stage(const PipelineConfig& c, const std::string& stage) {
  const auto path = manifest_path(c, stage);
  std::ifstream f(path);
  if (!f)
    throw StageInputMissing("stage '" + stage + "' has not run (missing " +
                            path.string() + ")");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(path.string() + ": " + e.what());
  }
  if (j.at("config_hash").get<uint64_t>() != config_hash(c))
    throw ConfigInvalid("stage '" + stage +
                        "' was produced under a different config; rerun it");
}

// ---- synthetic data ----

// Channel groups sharing one oscillator in class HC: homologous left/right
// pairs, a fronto-occipital loop, and the midline. Groups are separated in
// frequency by multiples of 0.6 Hz, so cross-group phase differences sweep
// whole cycles per 5 s epoch and mean out; same-frequency different-phase
// channels would otherwise stay perfectly phase-locked.
inline const std::vector<std::vector<int>>& synth_coupling_groups() {
  static const std::vector<std::vector<int>> groups = {
      {0, 9, 4, 13},  // Fp1, Fp2, O1, O2
      {1, 10},        // F3, F4
      {2, 11},        // C3, C4
      {3, 12},        // P3, P4
      {5, 14},        // F7, F8
      {6, 15},        // T3, T4
      {7, 16},        // T5, T6
      {8, 17, 18},    // Fz, Cz, Pz
  };
  return groups;
}

inline Recording synth_recording(int subject_index, Label label, const SynthConfig& sc,
                                 uint64_t seed) {
  std::mt19937_64 rng(detail::mix_seed(seed, 0x51f7 + subject_index));
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> ujit(0.9, 1.1);
  std::uniform_real_distribution<double> udc(-5.0, 5.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n = static_cast<int>(std::lround(sc.duration_s * sc.sample_rate_hz));
  const double amp = (label == Label::HC ? sc.hc_alpha_amp : sc.mdd_alpha_amp) * ujit(rng);
  const double theta_amp = label == Label::HC ? 0.0 : sc.mdd_theta_amp * ujit(rng);
  const double noise = label == Label::HC ? sc.hc_noise : sc.mdd_noise;

  std::vector<double> phase(Montage::kNumChannels);
  std::vector<double> freq(Montage::kNumChannels, sc.alpha_hz);
  std::vector<double> theta_phase(Montage::kNumChannels, 0.0);
  std::vector<double> theta_freq(Montage::kNumChannels, sc.theta_hz);
  if (label == Label::HC) {
    const auto& groups = synth_coupling_groups();
    const double span = 0.6 * (static_cast<double>(groups.size()) - 1.0);
    for (size_t g = 0; g < groups.size(); ++g) {
      const double p = uphase(rng);
      const double f = sc.alpha_hz - span / 2.0 + 0.6 * static_cast<double>(g);
      for (int ch : groups[g]) {
        phase[ch] = p;
        freq[ch] = f;
      }
    }
  } else {
    // MDD trades the coherent alpha for an uncoupled theta oscillator of
    // comparable strength. Both classes then share the oscillation-plus-noise
    // texture and band placement carries the class contrast.
    std::uniform_real_distribution<double> ufreq(sc.alpha_hz - 2.1, sc.alpha_hz + 2.1);
    std::uniform_real_distribution<double> utheta(sc.theta_hz - 0.5, sc.theta_hz + 0.5);
    for (int ch = 0; ch < Montage::kNumChannels; ++ch) {
      phase[ch] = uphase(rng);
      freq[ch] = ufreq(rng);
      theta_phase[ch] = uphase(rng);
      theta_freq[ch] = utheta(rng);
    }
  }
  const double line_phase = uphase(rng);

  Recording rec;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02d", label == Label::HC ? "hc" : "mdd",
                subject_index + 1);
  rec.subject_id = buf;
  rec.label = label;
  rec.sample_rate_hz = sc.sample_rate_hz;
  rec.channel_names.assign(Montage::channels().begin(), Montage::channels().end());
  rec.data = Matrix(Montage::kNumChannels, n);

  const double w_line = 2.0 * M_PI * sc.line_hz / sc.sample_rate_hz;
  for (int ch = 0; ch < Montage::kNumChannels; ++ch) {
    const double dc = udc(rng);
    const double w = 2.0 * M_PI * freq[ch] / sc.sample_rate_hz;
    const double w_theta = 2.0 * M_PI * theta_freq[ch] / sc.sample_rate_hz;
    for (int t = 0; t < n; ++t) {
      double v = amp * std::sin(w * t + phase[ch]);
      v += theta_amp * std::sin(w_theta * t + theta_phase[ch]);
      v += sc.line_amp * std::sin(w_line * t + line_phase);
      v += noise * gauss(rng);
      v += dc;
      rec.data(ch, t) = v;
    }
  }
  return rec;
}

inline std::vector<std::string> cmd_synth(const PipelineConfig& c) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.data_dir, ec);
  fs::create_directories(c.work_dir, ec);

  const int per_class = c.synth.n_subjects / 2;
  std::map<std::string, uint64_t> outputs;
  std::vector<std::string> files;
  for (int cls = 0; cls < 2; ++cls) {
    const Label label = cls == 0 ? Label::HC : Label::MDD;
    for (int i = 0; i < per_class; ++i) {
      const Recording rec = synth_recording(i, label, c.synth, c.seed);
      const fs::path path = c.data_dir / (rec.subject_id + ".json");
      save_recording(rec, path);
      outputs[path.filename().string()] = io::fnv1a_file(path);
      outputs[io::blob_path_for(path, ".f32").filename().string()] =
          io::fnv1a_file(io::blob_path_for(path, ".f32"));
      files.push_back(path.string());
    }
  }
  write_stage_manifest(c, "synth", outputs);
  return files;
}

// ---- epoch store ----

inline void save_epochs(const std::vector<Epoch>& epochs,
                        const std::filesystem::path& json_path) {
  std::vector<float> blob;
  nlohmann::json list = nlohmann::json::array();
  for (const Epoch& ep : epochs) {
    nlohmann::json je;
    je["subject_id"] = ep.subject_id;
    je["label"] = label_name(ep.label);
    je["sample_rate_hz"] = ep.sample_rate_hz;
    je["segment_index"] = ep.segment_index;
    je["rows"] = ep.data.rows;
    je["cols"] = ep.data.cols;
    je["offset"] = blob.size();
    for (double v : ep.data.data) blob.push_back(static_cast<float>(v));
    list.push_back(je);
  }
  nlohmann::json h;
  h["kind"] = "epochs";
  h["dtype"] = "f32le";
  h["n_values"] = blob.size();
  const std::filesystem::path blob_file = io::blob_path_for(json_path, ".f32");
  h["data_file"] = blob_file.filename().string();
  h["epochs"] = list;
  io::write_bytes(blob_file, blob.data(), blob.size() * sizeof(float));
  std::ofstream f(json_path, std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + json_path.string());
  f << h.dump() << "\n";
}

inline std::vector<Epoch> load_epochs(const std::filesystem::path& json_path) {
  std::ifstream f(json_path);
  if (!f) throw StageInputMissing("missing epoch store: " + json_path.string());
  nlohmann::json h;
  try {
    f >> h;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(json_path.string() + ": " + e.what());
  }
  if (h.at("kind").get<std::string>() != "epochs")
    throw CorruptHeader(json_path.string() + ": not an epoch store");
  const auto bytes =
      io::read_bytes(json_path.parent_path() / h.at("data_file").get<std::string>());
  const size_t n_values = h.at("n_values").get<size_t>();
  if (bytes.size() != n_values * sizeof(float))
    throw CorruptHeader(json_path.string() + ": truncated blob");
  const float* vals = reinterpret_cast<const float*>(bytes.data());

  std::vector<Epoch> out;
  for (const auto& je : h.at("epochs")) {
    Epoch ep;
    ep.subject_id = je.at("subject_id").get<std::string>();
    ep.label = je.at("label").get<std::string>() == "MDD" ? Label::MDD : Label::HC;
    ep.sample_rate_hz = je.at("sample_rate_hz").get<double>();
    ep.segment_index = je.at("segment_index").get<int>();
    const int rows = je.at("rows").get<int>();
    const int cols = je.at("cols").get<int>();
    const size_t off = je.at("offset").get<size_t>();
    if (off + static_cast<size_t>(rows) * cols > n_values)
      throw CorruptHeader(json_path.string() + ": epoch overruns blob");
    ep.data = Matrix(rows, cols);
    for (size_t k = 0; k < ep.data.data.size(); ++k)
      ep.data.data[k] = static_cast<double>(vals[off + k]);
    out.push_back(std::move(ep));
  }
  return out;
}

// ---- stages ----

inline std::vector<Epoch> preprocess_recording(const Recording& rec, const DspConfig& d) {
  Recording filtered = rec;
  const int taps = d.fir_taps > 0 ? d.fir_taps : default_fir_taps(rec.sample_rate_hz);
  std::vector<double> ch(rec.data.cols);
  for (int r = 0; r < rec.data.rows; ++r) {
    for (int s = 0; s < rec.data.cols; ++s) ch[s] = rec.data(r, s);
    ch = fir_bandpass(ch, d.bp_low_hz, d.bp_high_hz, rec.sample_rate_hz, taps);
    ch = notch_filter(ch, d.notch_hz, rec.sample_rate_hz, d.notch_q);
    for (int s = 0; s < rec.data.cols; ++s) filtered.data(r, s) = ch[s];
  }
  std::vector<Epoch> epochs = segment_epochs(filtered, d.epoch_s, d.overlap);
  for (Epoch& ep : epochs) ep.data = zscore_rows(ep.data);
  return epochs;
}

inline void cmd_preprocess(const PipelineConfig& c) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.work_dir, ec);

  std::vector<fs::path> headers;
  if (fs::exists(c.data_dir))
    for (const auto& entry : fs::directory_iterator(c.data_dir))
      if (entry.path().extension() == ".json") headers.push_back(entry.path());
  std::sort(headers.begin(), headers.end());
  if (headers.empty())
    throw StageInputMissing("no recordings found in " + c.data_dir.string());

  std::vector<Epoch> all;
  for (const auto& path : headers) {
    const Recording rec = load_recording(path);
    auto eps = preprocess_recording(rec, c.dsp);
    all.insert(all.end(), eps.begin(), eps.end());
  }
  const fs::path out = c.work_dir / "epochs.json";
  save_epochs(all, out);
  write_stage_manifest(c, "preprocess",
                       {{"epochs.json", io::fnv1a_file(out)},
                        {"epochs.f32", io::fnv1a_file(io::blob_path_for(out, ".f32"))}});
}

inline void cmd_featurize(const PipelineConfig& c) {
  require_stage(c, "preprocess");
  const auto epochs = load_epochs(c.work_dir / "epochs.json");

  std::vector<double> blob;
  nlohmann::json list = nlohmann::json::array();
  for (const Epoch& ep : epochs) {
    const FeatureMatrix fm = extract_features(ep, c.features);
    nlohmann::json je;
    je["subject_id"] = ep.subject_id;
    je["segment_index"] = ep.segment_index;
    je["offset"] = blob.size();
    blob.insert(blob.end(), fm.values.data.begin(), fm.values.data.end());
    list.push_back(je);
  }
  nlohmann::json h;
  h["kind"] = "features";
  h["rows"] = Montage::kNumChannels;
  h["cols"] = kNumFeatures;
  h["n_values"] = blob.size();
  h["data_file"] = "features.f64";
  h["epochs"] = list;
  const std::filesystem::path out = c.work_dir / "features.json";
  io::write_bytes(c.work_dir / "features.f64", blob.data(), blob.size() * sizeof(double));
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + out.string());
  f << h.dump() << "\n";
  write_stage_manifest(
      c, "featurize",
      {{"features.json", io::fnv1a_file(out)},
       {"features.f64", io::fnv1a_file(c.work_dir / "features.f64")}});
}

inline std::vector<Matrix> load_feature_matrices(const std::filesystem::path& json_path,
                                                 std::vector<std::pair<std::string, int>>* keys = nullptr) {
  std::ifstream f(json_path);
  if (!f) throw StageInputMissing("missing feature store: " + json_path.string());
  nlohmann::json h;
  try {
    f >> h;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(json_path.string() + ": " + e.what());
  }
  if (h.at("kind").get<std::string>() != "features")
    throw CorruptHeader(json_path.string() + ": not a feature store");
  const auto bytes =
      io::read_bytes(json_path.parent_path() / h.at("data_file").get<std::string>());
  const size_t n_values = h.at("n_values").get<size_t>();
  if (bytes.size() != n_values * sizeof(double))
    throw CorruptHeader(json_path.string() + ": truncated blob");
  const double* vals = reinterpret_cast<const double*>(bytes.data());
  const int rows = h.at("rows").get<int>();
  const int cols = h.at("cols").get<int>();

  std::vector<Matrix> out;
  for (const auto& je : h.at("epochs")) {
    const size_t off = je.at("offset").get<size_t>();
    if (off + static_cast<size_t>(rows) * cols > n_values)
      throw CorruptHeader(json_path.string() + ": feature block overruns blob");
    Matrix m(rows, cols);
    std::copy(vals + off, vals + off + m.data.size(), m.data.begin());
    out.push_back(std::move(m));
    if (keys)
      keys->push_back({je.at("subject_id").get<std::string>(),
                       je.at("segment_index").get<int>()});
  }
  return out;
}

inline void cmd_graph(const PipelineConfig& c) {
  require_stage(c, "preprocess");
  require_stage(c, "featurize");
  const auto epochs = load_epochs(c.work_dir / "epochs.json");
  std::vector<std::pair<std::string, int>> keys;
  const auto feats = load_feature_matrices(c.work_dir / "features.json", &keys);
  if (feats.size() != epochs.size())
    throw CorruptHeader("feature store does not match epoch store");

  std::vector<BrainGraph> graphs;
  for (size_t i = 0; i < epochs.size(); ++i) {
    const Epoch& ep = epochs[i];
    if (keys[i] != std::make_pair(ep.subject_id, ep.segment_index))
      throw CorruptHeader("feature/epoch ordering mismatch at block " +
                          std::to_string(i));
    BrainGraph g;
    g.subject_id = ep.subject_id;
    g.label = ep.label;
    g.segment_index = ep.segment_index;
    g.x = feats[i];
    const Matrix plv = plv_matrix(ep);
    std::vector<int> degree(plv.rows, 0);
    for (const Edge& e : topk_sparsify(plv, c.top_k)) {
      if (e.plv <= 0.0) continue;
      g.edges.push_back(e);
      ++degree[e.i];
      ++degree[e.j];
    }
    for (int n = 0; n < plv.rows; ++n)
      if (degree[n] == 0)
        throw IsolatedNode("graph for " + ep.subject_id + " segment " +
                           std::to_string(ep.segment_index) + ": node " +
                           std::to_string(n) + " has no edges");
    g.adjacency = Matrix(plv.rows, plv.cols);
    for (const Edge& e : g.edges) {
      g.adjacency(e.i, e.j) = e.plv;
      g.adjacency(e.j, e.i) = e.plv;
    }
    graphs.push_back(std::move(g));
  }
  const std::filesystem::path out = c.work_dir / "graphs.json";
  save_graphs(graphs, out);
  write_stage_manifest(c, "graph",
                       {{"graphs.json", io::fnv1a_file(out)},
                        {"graphs.f64", io::fnv1a_file(io::blob_path_for(out, ".f64"))}});
}

inline void cmd_train(const PipelineConfig& c) {
  require_stage(c, "graph");
  const auto graphs = load_graphs(c.work_dir / "graphs.json");
  TrainConfig tc = c.trainer;
  tc.seed = c.seed;
  const CvResult cv = run_cv(graphs, tc, c.model, c.top_k);

  std::map<std::string, uint64_t> outputs;
  for (size_t f = 0; f < cv.folds.size(); ++f) {
    const std::filesystem::path mp =
        c.work_dir / ("model_fold" + std::to_string(f) + ".json");
    save_model(cv.folds[f].bundle, mp);
    outputs[mp.filename().string()] = io::fnv1a_file(mp);
  }
  write_metrics_csv(cv.table, c.work_dir / "metrics.csv");
  outputs["metrics.csv"] = io::fnv1a_file(c.work_dir / "metrics.csv");

  nlohmann::json j;
  j["n_folds"] = cv.plan.n_folds;
  j["seed"] = cv.plan.seed;
  nlohmann::json folds = nlohmann::json::array();
  for (int f = 0; f < cv.plan.n_folds; ++f) {
    nlohmann::json jf;
    jf["test_subjects"] = cv.plan.test_subjects[f];
    jf["accuracy"] = cv.table.folds[f].accuracy;
    jf["precision"] = cv.table.folds[f].precision;
    jf["recall"] = cv.table.folds[f].recall;
    jf["f1"] = cv.table.folds[f].f1;
    jf["epochs_trained"] = cv.folds[f].epochs_trained;
    folds.push_back(jf);
  }
  j["folds"] = folds;
  nlohmann::json labels;
  for (const auto& [id, label] : cv.labels_used) labels[id] = label_name(label);
  j["labels_used"] = labels;
  {
    std::ofstream f(c.work_dir / "cv.json", std::ios::trunc);
    if (!f) throw IoFailure("cannot write cv.json");
    f << j.dump(2) << "\n";
  }
  outputs["cv.json"] = io::fnv1a_file(c.work_dir / "cv.json");
  write_stage_manifest(c, "train", outputs);
}

namespace pipe_detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows;
  j["cols"] = m.cols;
  j["data"] = m.data;
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.data.size()) throw CorruptHeader("matrix blob size mismatch");
  m.data = data;
  return m;
}

}  // namespace pipe_detail

inline void cmd_explain(const PipelineConfig& c) {
  require_stage(c, "graph");
  require_stage(c, "train");
  const auto graphs = load_graphs(c.work_dir / "graphs.json");

  nlohmann::json cvj;
  {
    std::ifstream f(c.work_dir / "cv.json");
    if (!f) throw StageInputMissing("missing cv.json");
    f >> cvj;
  }
  const int n_folds = cvj.at("n_folds").get<int>();
  std::map<std::string, int> subject_fold;
  for (int f = 0; f < n_folds; ++f)
    for (const auto& s : cvj.at("folds")[f].at("test_subjects"))
      subject_fold[s.get<std::string>()] = f;
  std::vector<ModelBundle> models;
  for (int f = 0; f < n_folds; ++f)
    models.push_back(load_model(c.work_dir / ("model_fold" + std::to_string(f) + ".json")));

  // Deterministic subset: the first n segments of every subject.
  std::vector<size_t> chosen;
  {
    std::map<std::string, int> taken;
    for (size_t i = 0; i < graphs.size(); ++i) {
      int& t = taken[graphs[i].subject_id];
      if (c.explain_segments_per_subject > 0 && t >= c.explain_segments_per_subject)
        continue;
      ++t;
      chosen.push_back(i);
    }
  }

  std::vector<BrainGraph> sel_graphs;
  std::vector<MaskSet> masks;
  std::vector<const ModelBundle*> sel_models;
  nlohmann::json jmasks = nlohmann::json::array();
  for (size_t idx : chosen) {
    const BrainGraph& g = graphs[idx];
    auto it = subject_fold.find(g.subject_id);
    if (it == subject_fold.end())
      throw StageInputMissing("subject " + g.subject_id + " missing from fold plan");
    const ModelBundle& bundle = models[it->second];
    MaskSet ms = optimize_masks(bundle, g, c.explain);

    nlohmann::json jm;
    jm["subject_id"] = g.subject_id;
    jm["segment_index"] = g.segment_index;
    jm["label"] = label_name(g.label);
    jm["fold"] = it->second;
    jm["directed"] = ms.directed;
    jm["ref_label"] = ms.ref_label;
    jm["ref_prob"] = ms.ref_prob;
    jm["masked_prob"] = ms.masked_prob;
    jm["faithful"] = ms.faithful;
    jm["mid_fraction"] = ms.mid_fraction;
    jm["pi_e"] = ms.pi_e().data;
    jm["pi_v"] = ms.pi_v().data;
    jm["pi_f"] = ms.pi_f().data;
    jmasks.push_back(jm);

    sel_graphs.push_back(g);
    masks.push_back(std::move(ms));
    sel_models.push_back(&bundle);
  }

  const SaliencyBundle bundle = aggregate_saliency(sel_graphs, masks, sel_models);

  {
    std::ofstream f(c.work_dir / "masks.json", std::ios::trunc);
    if (!f) throw IoFailure("cannot write masks.json");
    f << nlohmann::json{{"masks", jmasks}}.dump() << "\n";
  }
  nlohmann::json js;
  js["n_nonfaithful"] = bundle.n_nonfaithful;
  for (const auto& [name, grp] :
       {std::pair<const char*, const GroupSaliency*>{"hc", &bundle.hc},
        std::pair<const char*, const GroupSaliency*>{"mdd", &bundle.mdd}}) {
    nlohmann::json jg;
    jg["n_graphs"] = grp->n_graphs;
    jg["m_f"] = pipe_detail::matrix_to_json(grp->m_f);
    jg["m_v"] = pipe_detail::matrix_to_json(grp->m_v);
    jg["m_e"] = pipe_detail::matrix_to_json(grp->m_e);
    nlohmann::json attn = nlohmann::json::array();
    for (const Matrix& m : grp->attn_mean) attn.push_back(pipe_detail::matrix_to_json(m));
    jg["attn_mean"] = attn;
    js[name] = jg;
  }
  {
    nlohmann::json attn = nlohmann::json::array();
    for (const Matrix& m : bundle.attn_diff) attn.push_back(pipe_detail::matrix_to_json(m));
    js["attn_diff"] = attn;
  }
  {
    std::ofstream f(c.work_dir / "saliency.json", std::ios::trunc);
    if (!f) throw IoFailure("cannot write saliency.json");
    f << js.dump() << "\n";
  }
  write_stage_manifest(c, "explain",
                       {{"masks.json", io::fnv1a_file(c.work_dir / "masks.json")},
                        {"saliency.json", io::fnv1a_file(c.work_dir / "saliency.json")}});
}

inline SaliencyBundle load_saliency(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw StageInputMissing("missing saliency store: " + path.string());
  nlohmann::json js;
  try {
    f >> js;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(path.string() + ": " + e.what());
  }
  SaliencyBundle b;
  b.n_nonfaithful = js.at("n_nonfaithful").get<int>();
  for (const auto& [name, grp] : {std::pair<const char*, GroupSaliency*>{"hc", &b.hc},
                                  std::pair<const char*, GroupSaliency*>{"mdd", &b.mdd}}) {
    const auto& jg = js.at(name);
    grp->n_graphs = jg.at("n_graphs").get<int>();
    grp->m_f = pipe_detail::matrix_from_json(jg.at("m_f"));
    grp->m_v = pipe_detail::matrix_from_json(jg.at("m_v"));
    grp->m_e = pipe_detail::matrix_from_json(jg.at("m_e"));
    grp->attn_mean.clear();
    for (const auto& jm : jg.at("attn_mean"))
      grp->attn_mean.push_back(pipe_detail::matrix_from_json(jm));
  }
  b.attn_diff.clear();
  for (const auto& jm : js.at("attn_diff"))
    b.attn_diff.push_back(pipe_detail::matrix_from_json(jm));
  return b;
}

inline void cmd_report(const PipelineConfig& c, const std::filesystem::path& out_dir) {
  require_stage(c, "train");
  require_stage(c, "explain");
  const SaliencyBundle bundle = load_saliency(c.work_dir / "saliency.json");

  MetricsTable table;
  {
    nlohmann::json cvj;
    std::ifstream f(c.work_dir / "cv.json");
    if (!f) throw StageInputMissing("missing cv.json");
    f >> cvj;
    for (const auto& jf : cvj.at("folds")) {
      MetricsRow r;
      r.accuracy = jf.at("accuracy").get<double>();
      r.precision = jf.at("precision").get<double>();
      r.recall = jf.at("recall").get<double>();
      r.f1 = jf.at("f1").get<double>();
      table.folds.push_back(r);
    }
    table.finalize();
  }
  write_report(bundle, table, out_dir);

  std::map<std::string, uint64_t> outputs;
  for (const auto& entry : std::filesystem::directory_iterator(out_dir))
    if (entry.is_regular_file())
      outputs[entry.path().filename().string()] = io::fnv1a_file(entry.path());
  write_stage_manifest(c, "report", outputs);
}

}  // namespace expanet
