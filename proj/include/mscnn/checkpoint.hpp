#pragma once

#include <cstdint>
#include <string>

#include "mscnn/model.hpp"

namespace mscnn {

// Checkpoint container, format "MSCK" version 1, little-endian throughout:
//
//   char[4]  magic "MSCK"
//   u32      version (1)
//   u64      build seed
//   u32      epoch counter
//   u32      config byte count, then the config echo (describe_config text)
//   u32      tensor count
//   per tensor:
//     u32    name byte count, then the name
//     u32    rank, then i32 extents
//     f64    row-major payload
//
// Tensors appear in named_state() order and include the batchnorm running
// statistics, so a round trip is bit-lossless.

void save_checkpoint(const std::string& path, Network& net, int epoch);

struct LoadedNetwork {
    Network net;
    int epoch = 0;
};

LoadedNetwork load_checkpoint(const std::string& path);

}  // namespace mscnn
