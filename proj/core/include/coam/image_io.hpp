#pragma once

#include <string>

#include "coam/tensor.hpp"

namespace coam {

// 8-bit RGB PNG <-> (3,H,W) tensor with values in [0,1].
void save_png(const std::string& path, const Tensor& image);
Tensor load_png(const std::string& path);

}  // namespace coam
