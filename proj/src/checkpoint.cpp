#include "compslu/checkpoint.hpp"

#include <fstream>
#include <map>

#include "compslu/binio.hpp"
#include "compslu/errors.hpp"

namespace compslu {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'L', 'U', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

CheckpointMeta read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[8];
  binio::read_exact(is, magic, 8, "checkpoint magic");
  if (!std::equal(magic, magic + 8, kMagic)) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  if (const auto v = binio::get_u32(is, "checkpoint version"); v != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(v));
  }
  CheckpointMeta meta;
  meta.config_hash = binio::get_u64(is, "config hash");
  meta.step = binio::get_u64(is, "step");
  meta.seed = binio::get_u64(is, "seed");
  meta.config_text = binio::get_str(is, 1u << 24, "config text");
  return meta;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint: " + path.string());
  os.write(kMagic, 8);
  binio::put_u32(os, kVersion);
  binio::put_u64(os, meta.config_hash);
  binio::put_u64(os, meta.step);
  binio::put_u64(os, meta.seed);
  binio::put_str(os, meta.config_text);
  binio::put_u32(os, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, t] : params.entries()) {
    binio::put_str(os, name);
    binio::put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) binio::put_u64(os, d);
    for (double v : t.data()) binio::put_f64(os, v);
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  return read_header(is, path);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterStore& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  auto meta = read_header(is, path);
  const auto count = binio::get_u32(is, "parameter count");
  std::map<std::string, bool> loaded;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = binio::get_str(is, 4096, "parameter name");
    const auto ndim = binio::get_u32(is, "parameter rank");
    if (ndim > 8) throw DataError("implausible rank for parameter " + name);
    Shape shape(ndim);
    for (auto& d : shape) d = binio::get_u64(is, "parameter dim");
    if (!params.contains(name)) throw DataError("checkpoint has unknown parameter " + name);
    auto t = params.get(name);
    if (t.shape() != shape) {
      throw DataError("parameter " + name + " has shape " + shape_str(shape) +
                      " in checkpoint but " + shape_str(t.shape()) + " in model");
    }
    for (auto& v : t.mutable_data()) v = binio::get_f64(is, "parameter data");
    loaded[name] = true;
  }
  for (const auto& [name, t] : params.entries()) {
    if (!loaded.count(name)) throw DataError("checkpoint is missing parameter " + name);
  }
  return meta;
}

}  // namespace compslu
