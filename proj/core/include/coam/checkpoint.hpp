#pragma once

#include <map>
#include <string>

#include "coam/tensor.hpp"

namespace coam {

// Binary tensor container, little-endian:
//   magic "COAMCKPT", version u32, count u32, then per entry:
//   name length u16, UTF-8 name, rank u8, dims u32 each, float32 values row-major.
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace coam
