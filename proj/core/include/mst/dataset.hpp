#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mst/synthetic.hpp"

namespace mst {

/// Loads samples from a dataset argument:
///   synthetic:SEED:N   generated on the fly at `side` x `side`
///   DIR                DIR/images/<id>.png with DIR/masks/<id>.png, any size
/// Throws ConfigError on a bad argument and FormatError on unreadable files.
std::vector<Sample> load_dataset(const std::string& source, std::size_t side);

/// Writes samples in the directory layout read by load_dataset.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);

}  // namespace mst
