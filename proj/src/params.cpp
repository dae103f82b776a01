#include "rf4d/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace rf4d::diffcore {
namespace {

void write_doubles_le(std::ofstream& out, std::span<const double> values) {
  std::vector<unsigned char> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &values[i], sizeof bits);
    for (int byte = 0; byte < 8; ++byte) buf[i * 8 + byte] = static_cast<unsigned char>((bits >> (8 * byte)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_doubles_le(std::ifstream& in, std::span<double> values) {
  std::vector<unsigned char> buf(values.size() * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int byte = 0; byte < 8; ++byte) bits |= std::uint64_t(buf[i * 8 + byte]) << (8 * byte);
    std::memcpy(&values[i], &bits, sizeof(double));
  }
}

}  // namespace

ParamStore::ParamStore(ParamStore&& other) noexcept
    : clamp_warnings(other.clamp_warnings.load()), blocks_(std::move(other.blocks_)), step_(other.step_) {}

ParamStore& ParamStore::operator=(ParamStore&& other) noexcept {
  blocks_ = std::move(other.blocks_);
  step_ = other.step_;
  clamp_warnings.store(other.clamp_warnings.load());
  return *this;
}

ParamStore::Block& ParamStore::block_at(int id) {
  if (id < 0 || id >= block_count()) throw IndexError("ParamStore: block id " + std::to_string(id) + " out of range");
  return blocks_[static_cast<std::size_t>(id)];
}

const ParamStore::Block& ParamStore::block_at(int id) const {
  if (id < 0 || id >= block_count()) throw IndexError("ParamStore: block id " + std::to_string(id) + " out of range");
  return blocks_[static_cast<std::size_t>(id)];
}

int ParamStore::register_block(const std::string& name, std::vector<int> shape) {
  if (name.empty()) throw ValidationError("ParamStore: block name must be non-empty");
  if (has_block(name)) throw ValidationError("ParamStore: duplicate block \"" + name + "\"");
  std::size_t size = 1;
  for (int extent : shape) {
    if (extent <= 0) throw ValidationError("ParamStore: block \"" + name + "\" has non-positive shape entry");
    size *= static_cast<std::size_t>(extent);
  }
  Block block;
  block.name = name;
  block.shape = std::move(shape);
  block.values.assign(size, 0.0);
  block.grads.assign(size, 0.0);
  block.adam_m.assign(size, 0.0);
  block.adam_v.assign(size, 0.0);
  blocks_.push_back(std::move(block));
  return block_count() - 1;
}

int ParamStore::block_id(std::string_view name) const {
  for (int id = 0; id < block_count(); ++id)
    if (blocks_[static_cast<std::size_t>(id)].name == name) return id;
  throw IndexError("ParamStore: no block named \"" + std::string(name) + "\"");
}

bool ParamStore::has_block(std::string_view name) const {
  for (const Block& block : blocks_)
    if (block.name == name) return true;
  return false;
}

std::size_t ParamStore::total_params() const {
  std::size_t total = 0;
  for (const Block& block : blocks_) total += block.values.size();
  return total;
}

void ParamStore::zero_grads() {
  for (Block& block : blocks_) std::fill(block.grads.begin(), block.grads.end(), 0.0);
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  for (const Block& block : blocks_)
    for (double g : block.grads)
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in block \"" + block.name + "\"");

  const std::uint64_t t = step_ + 1;
  const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (Block& block : blocks_) {
    for (std::size_t i = 0; i < block.values.size(); ++i) {
      const double g = block.grads[i];
      block.adam_m[i] = beta1 * block.adam_m[i] + (1.0 - beta1) * g;
      block.adam_v[i] = beta2 * block.adam_v[i] + (1.0 - beta2) * g * g;
      const double m_hat = block.adam_m[i] / bias1;
      const double v_hat = block.adam_v[i] / bias2;
      block.values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      if (!std::isfinite(block.values[i]))
        throw NumericError("adam_step: non-finite parameter in block \"" + block.name + "\"");
    }
    std::fill(block.grads.begin(), block.grads.end(), 0.0);
  }
  step_ = t;
}

void ParamStore::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("ParamStore::save: cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json meta;
  meta["step"] = step_;
  nlohmann::json blocks = nlohmann::json::array();
  for (const Block& block : blocks_) blocks.push_back({{"name", block.name}, {"shape", block.shape}});
  meta["blocks"] = std::move(blocks);
  meta["segments"] = {"values", "adam_m", "adam_v"};

  {
    std::ofstream out(dir / "meta.json", std::ios::binary);
    if (!out) throw IoError("ParamStore::save: cannot open " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
  }
  std::ofstream out(dir / "params.f64", std::ios::binary);
  if (!out) throw IoError("ParamStore::save: cannot open " + (dir / "params.f64").string());
  for (const Block& block : blocks_) write_doubles_le(out, block.values);
  for (const Block& block : blocks_) write_doubles_le(out, block.adam_m);
  for (const Block& block : blocks_) write_doubles_le(out, block.adam_v);
  if (!out) throw IoError("ParamStore::save: failed writing params.f64");
}

ParamStore ParamStore::load(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  const auto payload_path = dir / "params.f64";
  if (!std::filesystem::exists(meta_path)) throw IoError("ParamStore::load: missing " + meta_path.string());
  if (!std::filesystem::exists(payload_path)) throw IoError("ParamStore::load: missing " + payload_path.string());

  nlohmann::json meta;
  {
    std::ifstream in(meta_path, std::ios::binary);
    try {
      in >> meta;
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("checkpoint meta.json: ") + e.what());
    }
  }

  ParamStore store;
  try {
    store.step_ = meta.at("step").get<std::uint64_t>();
    for (const auto& entry : meta.at("blocks"))
      store.register_block(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint meta.json: ") + e.what());
  }

  const std::size_t expected_bytes = store.total_params() * 3 * 8;
  std::ifstream in(payload_path, std::ios::binary | std::ios::ate);
  const auto actual_bytes = static_cast<std::size_t>(in.tellg());
  if (actual_bytes != expected_bytes)
    throw PayloadSizeError("params.f64: expected " + std::to_string(expected_bytes) + " bytes, found " +
                           std::to_string(actual_bytes));
  in.seekg(0);
  for (Block& block : store.blocks_) read_doubles_le(in, block.values);
  for (Block& block : store.blocks_) read_doubles_le(in, block.adam_m);
  for (Block& block : store.blocks_) read_doubles_le(in, block.adam_v);
  if (!in) throw IoError("ParamStore::load: failed reading params.f64");
  return store;
}

}  // namespace rf4d::diffcore
