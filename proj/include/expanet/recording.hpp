#pragma once

#include <array>
#include <string>
#include <vector>

#include "expanet/errors.hpp"
#include "expanet/matrix.hpp"

namespace expanet {

enum class Label : int { HC = 0, MDD = 1 };

inline const char* label_name(Label l) { return l == Label::HC ? "HC" : "MDD"; }

// Raw multichannel EEG time series, rows in canonical montage order after loading.
struct Recording {
  std::string subject_id;
  Label label = Label::HC;
  double sample_rate_hz = 0.0;
  std::vector<std::string> channel_names;
  Matrix data;  // [n_channels x n_samples], microvolts
};

// The fixed 19-channel 10-20 montage; row order is canonical for every graph.
struct Montage {
  static constexpr int kNumChannels = 19;

  static const std::array<std::string, kNumChannels>& channels() {
    static const std::array<std::string, kNumChannels> names = {
        "Fp1", "F3", "C3", "P3", "O1", "F7", "T3", "T5", "Fz",
        "Fp2", "F4", "C4", "P4", "O2", "F8", "T4", "T6", "Cz", "Pz"};
    return names;
  }

  static int index_of(const std::string& name) {
    const auto& ch = channels();
    for (int i = 0; i < kNumChannels; ++i)
      if (ch[i] == name) return i;
    return -1;
  }
};

// One fixed-duration z-scored segment.
struct Epoch {
  std::string subject_id;
  Label label = Label::HC;
  double sample_rate_hz = 0.0;
  Matrix data;  // [n_channels x N_t]
  int segment_index = 0;
};

}  // namespace expanet
