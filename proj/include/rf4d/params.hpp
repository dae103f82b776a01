#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rf4d/errors.hpp"

namespace rf4d::diffcore {

/// Named parameter blocks (flat 64-bit real arrays with shapes), their
/// gradient accumulators, and per-block Adam moments. Blocks are addressed
/// by the integer id returned at registration; names are unique.
class ParamStore {
 public:
  /// Registers a zero-initialized block. Throws ValidationError on a
  /// duplicate name or non-positive shape entry.
  int register_block(const std::string& name, std::vector<int> shape);

  int block_id(std::string_view name) const;  // throws IndexError if absent
  bool has_block(std::string_view name) const;
  int block_count() const { return static_cast<int>(blocks_.size()); }
  const std::string& block_name(int id) const { return block_at(id).name; }
  const std::vector<int>& shape(int id) const { return block_at(id).shape; }
  std::size_t block_size(int id) const { return block_at(id).values.size(); }
  std::size_t total_params() const;

  std::span<double> values(int id) { return block_at(id).values; }
  std::span<const double> values(int id) const { return block_at(id).values; }
  std::span<double> grads(int id) { return block_at(id).grads; }
  std::span<const double> grads(int id) const { return block_at(id).grads; }

  void zero_grads();

  /// Bias-corrected Adam over every block, then zeroes gradients and
  /// increments the step counter. Throws NumericError (leaving parameters
  /// untouched) if any gradient is non-finite, and after the update if any
  /// parameter or moment left the finite range.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  std::uint64_t step() const { return step_; }

  /// Out-of-cube query clamp events (hash encoding and flow warping).
  /// Mutable: read-only evaluation paths still count clamps.
  mutable std::atomic<std::uint64_t> clamp_warnings{0};

  /// Checkpoint: `meta.json` (block registry + step) and `params.f64`
  /// (little-endian doubles: all values, then Adam m, then Adam v, in block
  /// order). Round-trips bit-exactly.
  void save(const std::filesystem::path& dir) const;
  static ParamStore load(const std::filesystem::path& dir);

  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept;
  ParamStore& operator=(ParamStore&&) noexcept;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

 private:
  struct Block {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grads;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
  };

  Block& block_at(int id);
  const Block& block_at(int id) const;

  std::vector<Block> blocks_;
  std::uint64_t step_ = 0;
};

}  // namespace rf4d::diffcore
