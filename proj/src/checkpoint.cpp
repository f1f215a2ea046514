#include "salab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace salab::nn {

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
      static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  return true;
}

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  fail(ErrorCode::kFormat, "checkpoint " + path + ": " + why);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet<float>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path + " for writing");
  os.write(kCheckpointMagic, kMagicLen);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<float>& p = params[i];
    put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : p.value.data) put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  require(static_cast<bool>(os), ErrorCode::kIo, "write failed for " + path);
}

std::vector<std::pair<std::string, Tensor<float>>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open checkpoint " + path);
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0)
    corrupt(path, "bad magic");
  std::vector<std::pair<std::string, Tensor<float>>> out;
  std::uint32_t name_len = 0;
  while (get_u32(is, name_len)) {
    if (name_len == 0 || name_len > 4096) corrupt(path, "bad name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) corrupt(path, "truncated name");
    std::uint32_t rank = 0;
    if (!get_u32(is, rank) || rank == 0 || rank > 8) corrupt(path, "bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!get_u32(is, v) || v == 0) corrupt(path, "bad dims for " + name);
      d = v;
    }
    std::vector<float> values(numel(shape));
    for (float& v : values) {
      std::uint32_t bits = 0;
      if (!get_u32(is, bits)) corrupt(path, "truncated payload for " + name);
      v = std::bit_cast<float>(bits);
    }
    out.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return out;
}

void load_checkpoint(const std::string& path, ParameterSet<float>& params) {
  auto entries = read_checkpoint(path);
  require(entries.size() == params.size(), ErrorCode::kFormat,
          "checkpoint " + path + " holds " + std::to_string(entries.size()) +
              " parameters, model expects " + std::to_string(params.size()));
  for (auto& [name, tensor] : entries) {
    Parameter<float>* p = params.find(name);
    require(p != nullptr, ErrorCode::kFormat, "checkpoint " + path + ": unknown parameter " + name);
    require(p->value.shape == tensor.shape, ErrorCode::kShape,
            "checkpoint " + path + ": parameter " + name + " has shape " +
                shape_string(tensor.shape) + ", model expects " + shape_string(p->value.shape));
    p->value = std::move(tensor);
  }
}

}  // namespace salab::nn
