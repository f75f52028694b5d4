#pragma once

#include <string>
#include <vector>

#include "mtrc/model.hpp"

namespace mtrc {

// Binary weight container.
//
// Layout (all integers little-endian):
//   magic   "MTWC" (4 bytes)
//   u32     version (currently 1)
//   u32     meta length, then that many bytes of UTF-8 JSON metadata
//   u32     number of arrays
//   per array:
//     u16   name length, then the name bytes; names are keyed by partition,
//           e.g. "backbone/stage0/conv/W", "mapping_cell/M/W"
//     u8    rank, then u32 dims[rank]
//     f32   data[prod(dims)], little-endian IEEE-754
//
// Values are stored as 32-bit floats; in-memory parameters are doubles and
// are truncated on save.

struct WeightEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct WeightContainer {
  std::string meta;  // JSON text, may be empty
  std::vector<WeightEntry> entries;

  const WeightEntry* find(const std::string& name) const;
};

void write_container(const std::string& path, const WeightContainer& c);
WeightContainer read_container(const std::string& path);

// ModelParams <-> container. save_params stores the ArchConfig in the meta
// block so a checkpoint is self-describing.
WeightContainer params_to_container(const ModelParams& params);
void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

// Overwrites one partition of `dst` from the container entries prefixed with
// "<partition>/". Missing entries or shape mismatches raise IoError.
void load_partition_weights(const std::string& path,
                            const std::string& partition, ParamSet& dst);

// Container-level helpers used by checkpoints (extra non-parameter arrays).
void append_param_set(WeightContainer& c, const std::string& prefix,
                      const ParamSet& set);
void read_param_set(const WeightContainer& c, const std::string& prefix,
                    ParamSet& dst);

}  // namespace mtrc
