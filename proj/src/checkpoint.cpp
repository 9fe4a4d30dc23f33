// Copyright 2026 the fusiondet authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fusiondet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace fusiondet
{

namespace
{

constexpr char kMagic[7] = {'F', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream & os, T v)
{
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream & is, const std::string & what)
{
  T v;
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is) {
    throw std::runtime_error("checkpoint truncated while reading " + what);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string & path, const ParamStore & params)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open checkpoint for writing: " + path);
  }
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(params.items().size()));
  for (const auto & [name, t] : params.items()) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t e : t.shape()) {
      write_pod(os, static_cast<uint64_t>(e));
    }
    for (Scalar v : t.data()) {
      write_pod(os, static_cast<float>(v));
    }
  }
  if (!os) {
    throw std::runtime_error("write failure on checkpoint: " + path);
  }
}

void load_checkpoint(const std::string & path, ParamStore & params)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open checkpoint: " + path);
  }
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  const uint32_t version = read_pod<uint32_t>(is, "version");
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const uint64_t count = read_pod<uint64_t>(is, "tensor count");
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) {
      throw std::runtime_error("checkpoint truncated while reading name");
    }
    const uint32_t rank = read_pod<uint32_t>(is, "rank");
    std::vector<int64_t> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int64_t>(read_pod<uint64_t>(is, "extent"));
    }
    Tensor t = params.find(name);
    if (t.shape() != shape) {
      throw std::runtime_error(
        "checkpoint shape mismatch for " + name + ": file " + shape_str(shape) + " vs model " +
        shape_str(t.shape()));
    }
    for (Scalar & v : t.data()) {
      v = static_cast<Scalar>(read_pod<float>(is, "value"));
    }
  }
}

}  // namespace fusiondet
