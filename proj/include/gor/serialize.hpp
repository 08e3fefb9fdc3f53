#pragma once

#include <map>
#include <string>

#include "gor/layers.hpp"
#include "gor/tensor.hpp"

namespace gor {

/// Flat binary parameter file. Layout, all little-endian:
///   magic "GORK", version u32,
///   then per parameter: name length u32, name bytes, rank u32,
///   dims i64 each, float64 payload. Records run to EOF.
void save_params(const std::string& path, const std::map<std::string, TensorXd>& params);

std::map<std::string, TensorXd> load_params(const std::string& path);

/// Overwrite a built model's parameters from file; every stored record must
/// match an existing parameter's name and shape exactly, and every model
/// parameter must be present.
void load_into_model(const std::string& path, Model& model);

}  // namespace gor
