#include "crescendo/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "crescendo/error.hpp"

namespace crescendo {
namespace {

constexpr std::size_t kPad = 4;
constexpr std::size_t kPlane = kImageSide * kImageSide;

std::size_t label_bytes(int classes) {
  if (classes == 10) return 1;
  if (classes == 100) return 2;
  throw UsageError("CIFAR binary files hold 10 or 100 classes, got " + std::to_string(classes));
}

}  // namespace

Dataset load_cifar_binary(const std::filesystem::path& path, int classes, Split split) {
  const std::size_t header = label_bytes(classes);
  const std::size_t record = header + kImagePixels;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw FormatError(path.string() + " is empty", 0);
  if (bytes.size() % record != 0) {
    throw FormatError(path.string() + " is truncated: " + std::to_string(bytes.size()) +
                          " bytes is not a multiple of the " + std::to_string(record) + "-byte record",
                      bytes.size() / record * record);
  }
  Dataset data;
  data.split = split;
  data.classes = classes;
  const std::size_t count = bytes.size() / record;
  data.items.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const unsigned char* rec = bytes.data() + r * record;
    const int label = rec[header - 1];
    if (label >= classes) {
      throw FormatError(path.string() + ": label " + std::to_string(label) + " outside [0, " +
                            std::to_string(classes) + ")",
                        r * record + header - 1);
    }
    Tensor<float> pixels({kImageChannels, kImageSide, kImageSide});
    for (std::size_t i = 0; i < kImagePixels; ++i) pixels[i] = static_cast<float>(rec[header + i]) / 255.0f;
    data.items.push_back({std::move(pixels), label});
  }
  return data;
}

Dataset load_cifar_dir(const std::filesystem::path& dir, int classes, Split split, std::size_t limit) {
  std::vector<std::filesystem::path> files;
  if (classes == 10) {
    if (split == Split::Train) {
      for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
      files.push_back(dir / "test_batch.bin");
    }
  } else if (classes == 100) {
    files.push_back(dir / (split == Split::Train ? "train.bin" : "test.bin"));
  } else {
    label_bytes(classes);
  }
  Dataset out;
  out.split = split;
  out.classes = classes;
  for (const auto& file : files) {
    if (limit > 0 && out.items.size() >= limit) break;
    if (!std::filesystem::exists(file)) throw FormatError("missing CIFAR file " + file.string(), 0);
    Dataset part = load_cifar_binary(file, classes, split);
    for (auto& item : part.items) {
      if (limit > 0 && out.items.size() >= limit) break;
      out.items.push_back(std::move(item));
    }
  }
  return out;
}

void write_cifar_binary(const std::filesystem::path& path, const Dataset& data) {
  const std::size_t header = label_bytes(data.classes);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  std::vector<char> record(header + kImagePixels);
  for (const auto& item : data.items) {
    if (item.pixels.size() != kImagePixels) throw StructuralError("CIFAR records hold 3x32x32 images");
    record[0] = static_cast<char>(header == 2 ? item.label / 5 : item.label);
    record[header - 1] = static_cast<char>(item.label);
    for (std::size_t i = 0; i < kImagePixels; ++i) {
      const float v = std::clamp(item.pixels[i], 0.0f, 1.0f);
      record[header + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
    out.write(record.data(), static_cast<std::streamsize>(record.size()));
  }
}

LabeledImage standardize(const LabeledImage& image) {
  const auto values = image.pixels.data();
  double sum = 0.0;
  for (float v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (float v : values) sq += (v - mean) * (v - mean);
  const double stddev = std::max(std::sqrt(sq / static_cast<double>(values.size())), 1e-6);
  LabeledImage out{Tensor<float>(image.pixels.shape()), image.label};
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.pixels[i] = static_cast<float>((values[i] - mean) / stddev);
  }
  return out;
}

LabeledImage crop_and_flip(const LabeledImage& image, int offset_y, int offset_x, bool flip) {
  if (image.pixels.shape() != Shape{kImageChannels, kImageSide, kImageSide}) {
    throw StructuralError("augmentation expects a 3x32x32 image, got " + shape_string(image.pixels.shape()));
  }
  if (offset_y < 0 || offset_y > 2 * static_cast<int>(kPad) || offset_x < 0 ||
      offset_x > 2 * static_cast<int>(kPad)) {
    throw UsageError("crop offset outside [0, 8]");
  }
  LabeledImage out{Tensor<float>(image.pixels.shape()), image.label};
  const auto side = static_cast<std::ptrdiff_t>(kImageSide);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    for (std::ptrdiff_t y = 0; y < side; ++y) {
      // Padded coordinate offset + y maps to source row offset + y - 4.
      const std::ptrdiff_t sy = y + offset_y - static_cast<std::ptrdiff_t>(kPad);
      for (std::ptrdiff_t x = 0; x < side; ++x) {
        const std::ptrdiff_t dx = flip ? side - 1 - x : x;
        const std::ptrdiff_t sx = dx + offset_x - static_cast<std::ptrdiff_t>(kPad);
        float v = 0.0f;
        if (sy >= 0 && sy < side && sx >= 0 && sx < side) {
          v = image.pixels[c * kPlane + static_cast<std::size_t>(sy * side + sx)];
        }
        out.pixels[c * kPlane + static_cast<std::size_t>(y * side + x)] = v;
      }
    }
  }
  return out;
}

LabeledImage augment(const LabeledImage& image, Rng& rng) {
  const int offset_y = static_cast<int>(rng.uniform_index(2 * kPad + 1));
  const int offset_x = static_cast<int>(rng.uniform_index(2 * kPad + 1));
  const bool flip = rng.bernoulli(0.5);
  return crop_and_flip(image, offset_y, offset_x, flip);
}

Dataset synthetic_dataset(std::size_t n, int classes, std::uint64_t seed, Split split,
                          const SyntheticOptions& options) {
  if (classes < 2) throw UsageError("synthetic data needs at least two classes");
  if (n < static_cast<std::size_t>(classes)) throw UsageError("synthetic data needs at least one item per class");
  Dataset data;
  data.split = split;
  data.classes = classes;
  data.items.reserve(n);
  Rng rng = Rng(seed, Stream::Init).fork(split == Split::Train ? 0x7261696eULL : 0x74657374ULL);

  // Gaussian envelope centered on the image.
  std::vector<float> envelope(kPlane);
  const double center = (static_cast<double>(kImageSide) - 1.0) / 2.0;
  const double sigma = static_cast<double>(kImageSide) / 4.0;
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const double dy = static_cast<double>(y) - center, dx = static_cast<double>(x) - center;
      envelope[y * kImageSide + x] = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    const double theta = 2.0 * std::numbers::pi * label / classes;
    Tensor<float> pixels({kImageChannels, kImageSide, kImageSide});
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      const double amplitude =
          options.separation * std::cos(theta + 2.0 * std::numbers::pi * static_cast<double>(c) / 3.0);
      for (std::size_t p = 0; p < kPlane; ++p) {
        pixels[c * kPlane + p] =
            static_cast<float>(0.5 + amplitude * envelope[p] + options.noise * rng.normal());
      }
    }
    data.items.push_back({std::move(pixels), label});
  }
  return data;
}

}  // namespace crescendo
