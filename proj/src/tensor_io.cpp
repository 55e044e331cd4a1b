// SPDX-License-Identifier: Apache-2.0

#include "eendvc/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "eendvc/error.hpp"

namespace eendvc {

void TensorArchive::put(const std::string& name, const nn::Matrix& m) {
  tensors[name] = StoredTensor{{m.rows(), m.cols()}, m};
}

const StoredTensor* TensorArchive::find(const std::string& name) const {
  auto it = tensors.find(name);
  return it == tensors.end() ? nullptr : &it->second;
}

void write_safetensors(const std::string& path, const TensorArchive& archive) {
  nlohmann::ordered_json header;
  if (!archive.metadata.empty()) header["__metadata__"] = archive.metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const auto bytes = static_cast<std::uint64_t>(t.data.size()) * sizeof(double);
    header[name] = {{"dtype", "F64"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  // Pad so the data section starts 8-byte aligned.
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::uint64_t n = text.size();
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : archive.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!out) throw IoError("short write to " + path);
}

namespace {
double half_to_double(std::uint16_t h) {
  const std::uint32_t sign = (h >> 15) & 1u, exp = (h >> 10) & 0x1Fu, mant = h & 0x3FFu;
  double v;
  if (exp == 0) v = std::ldexp(static_cast<double>(mant), -24);
  else if (exp == 31) v = mant ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
  else v = std::ldexp(static_cast<double>(mant | 0x400u), static_cast<int>(exp) - 25);
  return sign ? -v : v;
}
}  // namespace

TensorArchive read_safetensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  if (!in || n > (1ull << 31)) throw IoError(path + ": bad safetensors header");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  const auto header = nlohmann::json::parse(text);
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  TensorArchive archive;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) archive.metadata[k] = v.get<std::string>();
      continue;
    }
    StoredTensor t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    std::int64_t count = 1;
    for (auto d : t.shape) count *= d;
    const std::int64_t rows = t.shape.empty() ? 1 : t.shape.front();
    const std::int64_t cols = rows == 0 ? 0 : count / rows;
    if (offsets.size() != 2 || offsets[1] > data.size() || offsets[0] > offsets[1])
      throw IoError(path + ": tensor '" + name + "' has invalid offsets");
    const char* p = data.data() + offsets[0];
    const auto bytes = offsets[1] - offsets[0];
    t.data.resize(rows, cols);
    double* dst = t.data.data();
    auto check = [&](std::size_t width) {
      if (bytes != static_cast<std::uint64_t>(count) * width)
        throw IoError(path + ": tensor '" + name + "' size does not match shape");
    };
    if (dtype == "F64") {
      check(8);
      std::memcpy(dst, p, bytes);
    } else if (dtype == "F32") {
      check(4);
      for (std::int64_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, p + 4 * i, 4);
        dst[i] = f;
      }
    } else if (dtype == "F16" || dtype == "BF16") {
      check(2);
      for (std::int64_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, p + 2 * i, 2);
        if (dtype == "F16") {
          dst[i] = half_to_double(h);
        } else {
          dst[i] = std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
        }
      }
    } else {
      throw IoError(path + ": unsupported dtype " + dtype + " for '" + name + "'");
    }
    archive.tensors.emplace(name, std::move(t));
  }
  return archive;
}

}  // namespace eendvc
