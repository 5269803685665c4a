#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crescendo/rng.hpp"
#include "crescendo/tensor.hpp"

namespace crescendo {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImagePixels = kImageChannels * kImageSide * kImageSide;

struct LabeledImage {
  Tensor<float> pixels;  // [3, 32, 32]
  int label = 0;
};

enum class Split { Train, Test };

struct Dataset {
  Split split = Split::Train;
  std::vector<LabeledImage> items;
  int classes = 10;

  std::size_t size() const noexcept { return items.size(); }
};

/// CIFAR binary records. 10 classes: [label u8][1024 R][1024 G][1024 B].
/// 100 classes: [coarse u8][fine u8][3072 pixels], fine label kept.
/// Pixels are scaled to [0, 1]. Record order is preserved.
Dataset load_cifar_binary(const std::filesystem::path& path, int classes, Split split = Split::Train);

/// The standard file set under dir: data_batch_1..5.bin / test_batch.bin for
/// 10 classes, train.bin / test.bin for 100 classes. limit > 0 keeps the
/// first limit records.
Dataset load_cifar_dir(const std::filesystem::path& dir, int classes, Split split, std::size_t limit = 0);

/// Inverse of load_cifar_binary; pixels are clamped to [0, 1] and rounded
/// to the nearest of 256 levels.
void write_cifar_binary(const std::filesystem::path& path, const Dataset& data);

/// Subtracts the image's scalar pixel mean and divides by its standard
/// deviation (guarded by max(std, 1e-6)).
LabeledImage standardize(const LabeledImage& image);

/// Zero-pads to 40x40, crops the 32x32 window at (offset_y, offset_x) in
/// [0, 8] and mirrors horizontally when flip is set.
LabeledImage crop_and_flip(const LabeledImage& image, int offset_y, int offset_x, bool flip);

/// crop_and_flip with a uniform offset and a fair coin for the flip.
LabeledImage augment(const LabeledImage& image, Rng& rng);

struct SyntheticOptions {
  float noise = 0.3f;       // per-pixel Gaussian standard deviation
  float separation = 0.2f;  // amplitude of the class-specific channel pattern
};

/// Class-balanced images: each class has a distinct channel-mean pattern,
/// pixels add Gaussian noise. Deterministic for a seed.
Dataset synthetic_dataset(std::size_t n, int classes, std::uint64_t seed, Split split = Split::Train,
                          const SyntheticOptions& options = {});

}  // namespace crescendo
