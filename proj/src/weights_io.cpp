#include "mtrc/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mtrc/serialize.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight container I/O assumes a little-endian host");

namespace mtrc {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'W', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated weight container: " + path);
  return v;
}

}  // namespace

const WeightEntry* WeightContainer::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void write_container(const std::string& path, const WeightContainer& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(c.meta.size()));
  os.write(c.meta.data(), static_cast<std::streamsize>(c.meta.size()));
  write_pod<uint32_t>(os, static_cast<uint32_t>(c.entries.size()));
  for (const auto& e : c.entries) {
    if (e.name.size() > 0xffff) throw IoError("entry name too long: " + e.name);
    write_pod<uint16_t>(os, static_cast<uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_pod<uint8_t>(os, static_cast<uint8_t>(e.shape.size()));
    int64_t n = 1;
    for (int d : e.shape) {
      write_pod<uint32_t>(os, static_cast<uint32_t>(d));
      n *= d;
    }
    if (static_cast<int64_t>(e.data.size()) != n)
      throw IoError("entry data/shape mismatch: " + e.name);
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(sizeof(float) * e.data.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

WeightContainer read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a weight container: " + path);
  const uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kVersion)
    throw IoError("unsupported container version " + std::to_string(version) +
                  ": " + path);
  WeightContainer c;
  const uint32_t meta_len = read_pod<uint32_t>(is, path);
  c.meta.resize(meta_len);
  if (meta_len) {
    is.read(c.meta.data(), meta_len);
    if (!is) throw IoError("truncated weight container: " + path);
  }
  const uint32_t count = read_pod<uint32_t>(is, path);
  c.entries.resize(count);
  for (auto& e : c.entries) {
    const uint16_t name_len = read_pod<uint16_t>(is, path);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const uint8_t rank = read_pod<uint8_t>(is, path);
    int64_t n = 1;
    e.shape.resize(rank);
    for (int i = 0; i < rank; ++i) {
      e.shape[i] = static_cast<int>(read_pod<uint32_t>(is, path));
      n *= e.shape[i];
    }
    e.data.resize(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(sizeof(float) * n));
    if (!is) throw IoError("truncated weight container: " + path);
  }
  return c;
}

void append_param_set(WeightContainer& c, const std::string& prefix,
                      const ParamSet& set) {
  for (const auto& it : set.items) {
    WeightEntry e;
    e.name = prefix + "/" + it.name;
    e.shape = it.tensor.shape();
    e.data.resize(static_cast<size_t>(it.tensor.size()));
    for (int64_t i = 0; i < it.tensor.size(); ++i)
      e.data[static_cast<size_t>(i)] = static_cast<float>(it.tensor[i]);
    c.entries.push_back(std::move(e));
  }
}

void read_param_set(const WeightContainer& c, const std::string& prefix,
                    ParamSet& dst) {
  for (auto& it : dst.items) {
    const std::string name = prefix + "/" + it.name;
    const WeightEntry* e = c.find(name);
    if (!e) throw IoError("missing array '" + name + "' in weight container");
    if (e->shape != it.tensor.shape())
      throw IoError("shape mismatch for '" + name + "' in weight container");
    for (int64_t i = 0; i < it.tensor.size(); ++i)
      it.tensor[i] = e->data[static_cast<size_t>(i)];
  }
}

WeightContainer params_to_container(const ModelParams& params) {
  WeightContainer c;
  c.meta = arch_config_to_json(params.config).dump();
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    append_param_set(c, partition_name(part), params.partition(part));
  }
  return c;
}

void save_params(const std::string& path, const ModelParams& params) {
  write_container(path, params_to_container(params));
}

ModelParams load_params(const std::string& path) {
  WeightContainer c = read_container(path);
  if (c.meta.empty())
    throw IoError("weight container has no config metadata: " + path);
  ArchConfig cfg = arch_config_from_json(nlohmann::json::parse(c.meta));
  ModelParams params = init_parameters(cfg, 0);
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    read_param_set(c, partition_name(part), params.partition(part));
  }
  return params;
}

void load_partition_weights(const std::string& path,
                            const std::string& partition, ParamSet& dst) {
  WeightContainer c = read_container(path);
  read_param_set(c, partition, dst);
}

}  // namespace mtrc
