#include "rf4d/mlp.hpp"

#include <cmath>

namespace rf4d::diffcore {

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ValidationError("MlpSpec: need at least input and output widths");
  for (int w : widths)
    if (w < 1) throw ValidationError("MlpSpec: widths must be >= 1");
}

void register_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec, Rng& rng, bool zero_output) {
  spec.validate();
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    const int in = spec.widths[layer];
    const int out = spec.widths[layer + 1];
    const int w_id = store.register_block(prefix + "/W" + std::to_string(layer), {out, in});
    store.register_block(prefix + "/b" + std::to_string(layer), {out});
    const bool last = layer == spec.layer_count() - 1;
    if (last && zero_output) continue;  // blocks start zeroed
    const double bound = std::sqrt(6.0 / in);
    for (double& w : store.values(w_id)) w = bound * (2.0 * rng.uniform() - 1.0);
  }
}

std::vector<int> resolve_mlp(const ParamStore& store, const std::string& prefix, const MlpSpec& spec) {
  spec.validate();
  std::vector<int> blocks;
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    blocks.push_back(store.block_id(prefix + "/W" + std::to_string(layer)));
    blocks.push_back(store.block_id(prefix + "/b" + std::to_string(layer)));
  }
  return blocks;
}

NodeId tape_mlp(Tape& tape, const std::vector<int>& blocks, NodeId input) {
  if (blocks.empty() || blocks.size() % 2 != 0) throw ShapeError("tape_mlp: blocks must pair weights and biases");
  NodeId h = input;
  const int layers = static_cast<int>(blocks.size()) / 2;
  for (int layer = 0; layer < layers; ++layer) {
    h = tape.affine(blocks[2 * layer], blocks[2 * layer + 1], h);
    if (layer + 1 < layers) h = tape.relu(h);
  }
  return h;
}

std::vector<double> mlp_forward(const ParamStore& store, const std::vector<int>& blocks,
                                std::span<const double> input) {
  if (blocks.empty() || blocks.size() % 2 != 0) throw ShapeError("mlp_forward: blocks must pair weights and biases");
  std::vector<double> h(input.begin(), input.end());
  const int layers = static_cast<int>(blocks.size()) / 2;
  for (int layer = 0; layer < layers; ++layer) {
    const auto& w_shape = store.shape(blocks[2 * layer]);
    const int out = w_shape[0], in = w_shape[1];
    if (static_cast<int>(h.size()) != in) throw ShapeError("mlp_forward: input width mismatch");
    const auto wv = store.values(blocks[2 * layer]);
    const auto bv = store.values(blocks[2 * layer + 1]);
    std::vector<double> next(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) {
      double acc = bv[i];
      const double* row = wv.data() + static_cast<std::size_t>(i) * in;
      for (int j = 0; j < in; ++j) acc += row[j] * h[j];
      next[i] = acc;
    }
    if (layer + 1 < layers)
      for (double& v : next) v = v > 0.0 ? v : 0.0;
    h = std::move(next);
  }
  return h;
}

double lr_schedule(int step, int total, double lr0, double lr_final) {
  if (total < 1) throw DomainError("lr_schedule: total must be >= 1");
  if (step < 0 || step > total) throw DomainError("lr_schedule: step must lie in [0, total]");
  return lr0 * std::pow(lr_final / lr0, static_cast<double>(step) / total);
}

}  // namespace rf4d::diffcore
