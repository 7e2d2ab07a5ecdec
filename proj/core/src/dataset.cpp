#include "mst/dataset.hpp"

#include <algorithm>
#include <charconv>

#include "mst/error.hpp"
#include "mst/image_io.hpp"

namespace mst {
namespace {

std::uint64_t parse_count(const std::string& text, const std::string& source) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("dataset '" + source + "': '" + text + "' is not a non-negative integer");
  }
  return v;
}

}  // namespace

std::vector<Sample> load_dataset(const std::string& source, std::size_t side) {
  const std::string prefix = "synthetic:";
  if (source.rfind(prefix, 0) == 0) {
    const std::string rest = source.substr(prefix.size());
    const auto colon = rest.find(':');
    if (colon == std::string::npos) throw ConfigError("dataset '" + source + "': expected synthetic:SEED:N");
    const auto seed = parse_count(rest.substr(0, colon), source);
    const auto n = parse_count(rest.substr(colon + 1), source);
    if (n == 0) throw ConfigError("dataset '" + source + "': N must be positive");
    return gen_synthetic(seed, n, side);
  }
  const std::filesystem::path dir(source);
  if (!std::filesystem::is_directory(dir / "images") || !std::filesystem::is_directory(dir / "masks")) {
    throw ConfigError("dataset '" + source + "': expected synthetic:SEED:N or a directory with images/ and masks/");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir / "images"))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("dataset '" + source + "': no images");
  std::vector<Sample> out;
  for (const auto& f : files) {
    Sample s;
    s.id = f.stem().string();
    s.image = read_png(f);
    s.mask = read_mask_png(dir / "masks" / f.filename());
    if (s.mask.width != s.image.width || s.mask.height != s.image.height) {
      throw FormatError("dataset: mask size differs from image for " + s.id);
    }
    if (s.mask.area() == 0) throw FormatError("dataset: empty mask for " + s.id);
    s.scale_ratio = double(s.mask.area()) / double(s.mask.width * s.mask.height);
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  for (const auto& s : samples) {
    write_file(dir / "images" / (s.id + ".png"), encode_png(s.image));
    write_file(dir / "masks" / (s.id + ".png"), encode_mask_png(s.mask));
  }
}

}  // namespace mst
