#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "memmeter/csv.hpp"
#include "memmeter/error.hpp"
#include "memmeter/image.hpp"

namespace memmeter {

// An immutable, non-empty collection of same-sized images with optional
// class/scene labels.
class Dataset {
 public:
  Dataset(std::vector<ImageTensor> images, std::map<std::string, std::string> labels = {},
          std::string source = {})
      : images_(std::move(images)), labels_(std::move(labels)), source_(std::move(source)) {
    if (images_.empty()) throw data_error("dataset " + source_ + " is empty");
    const auto& first = images_.front();
    for (std::size_t i = 0; i < images_.size(); ++i) {
      const auto& img = images_[i];
      if (img.channels != first.channels || img.height != first.height || img.width != first.width) {
        throw data_error("dataset " + source_ + ": image " + img.id + " has inconsistent dimensions");
      }
      if (!index_.emplace(img.id, i).second) throw data_error("dataset " + source_ + ": duplicate id " + img.id);
    }
    for (const auto& [id, label] : labels_) {
      if (!index_.contains(id)) throw data_error("label for unknown id " + id);
    }
  }

  std::size_t size() const { return images_.size(); }
  const std::vector<ImageTensor>& images() const { return images_; }
  const ImageTensor& operator[](std::size_t i) const { return images_[i]; }
  const std::map<std::string, std::string>& labels() const { return labels_; }
  const std::string& source() const { return source_; }

  std::size_t channels() const { return images_.front().channels; }
  std::size_t height() const { return images_.front().height; }
  std::size_t width() const { return images_.front().width; }

  bool contains(const std::string& id) const { return index_.contains(id); }
  const ImageTensor& at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw data_error("image id " + id + " not in dataset " + source_);
    return images_[it->second];
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(images_.size());
    for (const auto& img : images_) out.push_back(img.id);
    return out;
  }

 private:
  std::vector<ImageTensor> images_;
  std::map<std::string, std::string> labels_;
  std::string source_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary: records of 1 label byte + 3072 bytes (R, G, B planes of
// 32x32). Ids are "<file name>#<record index>".

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

inline const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names{"airplane", "automobile", "bird",  "cat",  "deer",
                                              "dog",      "frog",       "horse", "ship", "truck"};
  return names;
}

inline Dataset parse_cifar_binary(const std::string& bytes, const std::string& file_name) {
  if (bytes.empty()) throw format_error("empty CIFAR file " + file_name, 0);
  if (bytes.size() % kCifarRecord != 0) {
    const std::uint64_t offset = (bytes.size() / kCifarRecord) * kCifarRecord;
    throw format_error("truncated CIFAR record in " + file_name, offset);
  }
  const std::size_t count = bytes.size() / kCifarRecord;
  std::vector<ImageTensor> images;
  std::map<std::string, std::string> labels;
  images.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + r * kCifarRecord;
    ImageTensor img(file_name + "#" + std::to_string(r), 3, kCifarSide, kCifarSide);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = rec[1 + i] / 255.0;
    const unsigned label = rec[0];
    if (label >= cifar10_class_names().size()) {
      throw format_error("CIFAR-10 label " + std::to_string(label) + " out of range in " + file_name, r * kCifarRecord);
    }
    labels[img.id] = cifar10_class_names()[label];
    images.push_back(std::move(img));
  }
  return Dataset(std::move(images), std::move(labels), file_name);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Dataset load_cifar_binary(const std::filesystem::path& path) {
  return parse_cifar_binary(read_file_bytes(path), path.filename().string());
}

inline std::string encode_cifar_binary(const Dataset& dataset, const std::vector<unsigned char>& labels) {
  if (dataset.channels() != 3 || dataset.height() != kCifarSide || dataset.width() != kCifarSide)
    throw config_error("CIFAR records must be 3x32x32");
  std::string out;
  out.reserve(dataset.size() * kCifarRecord);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out.push_back(static_cast<char>(i < labels.size() ? labels[i] : 0));
    for (double v : dataset[i].pixels) out.push_back(static_cast<char>(std::lround(v * 255.0)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6), maxval <= 255.

namespace detail {

class PpmHeaderReader {
 public:
  PpmHeaderReader(const std::string& bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::uint64_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::uint64_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::uint64_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw format_error(name_ + ": " + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw format_error(name_ + ": expected " + what, start);
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  const std::string& bytes_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ImageTensor parse_ppm(const std::string& bytes, const std::string& id) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw format_error(id + ": bad magic, expected P6", 0);
  detail::PpmHeaderReader header(bytes, id);
  header.advance(2);
  const auto width = header.number("width");
  const auto height = header.number("height");
  const std::size_t maxval_at = header.pos();
  const auto maxval = header.number("maxval");
  if (width == 0 || height == 0) throw format_error(id + ": zero image dimension", maxval_at);
  if (maxval == 0 || maxval > 255) throw format_error(id + ": maxval must be in 1..255", maxval_at);
  if (header.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[header.pos()])))
    throw format_error(id + ": missing whitespace after maxval", header.pos());
  header.advance(1);
  const std::size_t data_at = header.pos();
  const std::size_t expected = 3 * width * height;
  if (bytes.size() - data_at < expected) throw format_error(id + ": truncated pixel data", bytes.size());
  if (bytes.size() - data_at > expected) throw format_error(id + ": trailing bytes after pixel data", data_at + expected);
  ImageTensor img(id, 3, height, width);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data()) + data_at;
  const double scale = static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const unsigned v = px[(y * width + x) * 3 + c];
        if (v > maxval) throw format_error(id + ": sample exceeds maxval", data_at + (y * width + x) * 3 + c);
        img.at(c, y, x) = v / scale;
      }
  return img;
}

// Canonical maxval-255 encoding: "P6\n<w> <h>\n255\n" followed by RGB triples.
inline std::string encode_ppm(const ImageTensor& image) {
  if (image.channels != 3) throw config_error("PPM encoding needs a 3-channel image");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + 3 * image.plane());
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(std::lround(image.at(c, y, x) * 255.0)));
  return out;
}

inline ImageTensor load_ppm(const std::filesystem::path& path) {
  return parse_ppm(read_file_bytes(path), path.stem().string());
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data_error("failed writing " + path.string());
}

struct ManifestEntry {
  std::string id;
  std::string filename;
  std::optional<std::string> label;
};

// Manifest CSV rows "id,filename[,label]"; an optional header row starting
// with "id" is skipped.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestEntry> entries;
  const auto rows = read_csv(path);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (r == 0 && !row.empty() && row[0] == "id") continue;
    if (row.size() < 2 || row.size() > 3) {
      throw data_error(path.string() + ": manifest row " + std::to_string(r + 1) + " needs 2 or 3 fields");
    }
    ManifestEntry e{row[0], row[1], std::nullopt};
    if (row.size() == 3 && !row[2].empty()) e.label = row[2];
    entries.push_back(std::move(e));
  }
  return entries;
}

// Loads a directory of .ppm files. With a manifest, ids, files and labels
// come from it in manifest order; otherwise every *.ppm in name order, keyed
// by file stem.
inline Dataset load_ppm_dir(const std::filesystem::path& dir,
                            const std::optional<std::filesystem::path>& manifest = std::nullopt) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw data_error(dir.string() + " is not a directory");
  std::vector<ImageTensor> images;
  std::map<std::string, std::string> labels;
  if (manifest) {
    for (const auto& e : read_manifest(*manifest)) {
      ImageTensor img = parse_ppm(read_file_bytes(dir / e.filename), e.id);
      if (e.label) labels[e.id] = *e.label;
      images.push_back(std::move(img));
    }
  } else {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) images.push_back(load_ppm(f));
  }
  return Dataset(std::move(images), std::move(labels), dir.filename().string());
}

// Writes every image as <id>.ppm plus manifest.csv (with labels when present).
inline void write_ppm_dir(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "id,filename,label\n";
  for (const auto& img : dataset.images()) {
    const std::string file = img.id + ".ppm";
    write_bytes(dir / file, encode_ppm(img));
    auto it = dataset.labels().find(img.id);
    manifest << img.id << ',' << file << ',' << (it != dataset.labels().end() ? it->second : "") << '\n';
  }
  write_bytes(dir / "manifest.csv", manifest.str());
}

// A directory (PPM, using manifest.csv when present) or a CIFAR .bin file.
inline Dataset load_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    const auto manifest = path / "manifest.csv";
    return load_ppm_dir(path, fs::exists(manifest) ? std::optional<fs::path>(manifest) : std::nullopt);
  }
  if (!fs::exists(path)) throw data_error("dataset path " + path.string() + " does not exist");
  if (path.extension() == ".ppm") {
    std::vector<ImageTensor> one{load_ppm(path)};
    return Dataset(std::move(one), {}, path.filename().string());
  }
  return load_cifar_binary(path);
}

}  // namespace memmeter
