#pragma once

// Checkpoint container: a little-endian binary file holding named float32
// tensors.  Layout:
//   bytes 0..3   magic "PRCK"
//   u32          format version (1)
//   u32          tensor count T
//   T records:   u32 name length, name bytes, u32 ndim, i32 dims[ndim],
//                u64 offset of the tensor's data from the start of the
//                data region
//   u64          data region byte size
//   data region  raw float32 values, tensors at their stated offsets
// Round-trips are bit-exact.

#include <string>
#include <utility>
#include <vector>

#include "pareid/tensor.hpp"

namespace pareid {

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::vector<StoredTensor>& tensors);
std::vector<StoredTensor> load_checkpoint(const std::string& path);

// Copies loaded values into an existing named-parameter registry.  Every
// registry entry must be present with a matching shape; all mismatches are
// collected and reported in one error.
void restore_params(const std::vector<StoredTensor>& loaded,
                    std::vector<std::pair<std::string, Tensor<float>>>& params);

const StoredTensor* find_tensor(const std::vector<StoredTensor>& tensors, const std::string& name);

}  // namespace pareid
