#pragma once

#include <string>
#include <vector>

#include "rf4d/rng.hpp"
#include "rf4d/tape.hpp"

namespace rf4d::diffcore {

/// Dense MLP layer widths, input first: {in, hidden..., out}.
struct MlpSpec {
  std::vector<int> widths;

  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;
};

/// Registers blocks `prefix/W0`, `prefix/b0`, ... Hidden weights draw from
/// the He-uniform range, biases start at zero; zero_output additionally
/// zeroes the final layer's weights so the net starts at output 0.
void register_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec, Rng& rng,
                  bool zero_output = false);

/// Block ids in layer order [W0, b0, W1, b1, ...] for a registered MLP.
std::vector<int> resolve_mlp(const ParamStore& store, const std::string& prefix, const MlpSpec& spec);

/// Records affine/ReLU layers on the tape; the output layer stays linear.
NodeId tape_mlp(Tape& tape, const std::vector<int>& blocks, NodeId input);

/// Convenience forward pass without a tape.
std::vector<double> mlp_forward(const ParamStore& store, const std::vector<int>& blocks,
                                std::span<const double> input);

/// Exponential decay lr0 * (lr_final/lr0)^(step/total).
double lr_schedule(int step, int total, double lr0 = 1e-4, double lr_final = 1e-5);

}  // namespace rf4d::diffcore
