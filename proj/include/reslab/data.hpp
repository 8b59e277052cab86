#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "reslab/tensor.hpp"

namespace reslab {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Test };

/// Per-channel statistics of the CIFAR-10 training images (pixel/255 scale).
inline constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifarStd{0.2470, 0.2435, 0.2616};

/// Images are stored normalized, N x C x H x W row-major.
struct Dataset {
  std::vector<float> images;
  std::vector<int> labels;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 10;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * height * width; }
  std::span<const float> image(std::size_t i) const {
    return {images.data() + i * image_numel(), image_numel()};
  }
  /// Gathers the given samples into an N x C x H x W tensor.
  Tensor<float> batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

enum class CifarFormat { Cifar10, Cifar100 };

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// 3073 bytes for CIFAR-10 (label, R, G, B planes), 3074 for CIFAR-100
/// (coarse label, fine label, planes).
std::size_t record_bytes(CifarFormat fmt);

struct CifarRecord {
  std::uint8_t coarse_label = 0;  // CIFAR-100 only
  std::uint8_t label = 0;
  std::array<std::uint8_t, kCifarPixels> pixels{};
};

/// Decodes a whole binary file image. `expected_records` of 0 accepts any
/// whole number of records. Label bytes outside the class range raise a
/// corrupt-record error carrying the byte offset.
std::vector<CifarRecord> decode_cifar(std::span<const std::uint8_t> bytes, CifarFormat fmt,
                                      std::size_t expected_records = kCifarRecordsPerFile,
                                      const std::string& source = "<memory>");
std::vector<std::uint8_t> encode_cifar(std::span<const CifarRecord> records, CifarFormat fmt);

std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path, CifarFormat fmt,
                                         std::size_t expected_records = kCifarRecordsPerFile);

/// (pixel/255 - mean)/std per channel; fine labels for CIFAR-100.
Dataset to_dataset(std::span<const CifarRecord> records, CifarFormat fmt, Split split);

/// data_batch_{1..5}.bin and test_batch.bin.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);
/// train.bin and test.bin.
std::pair<Dataset, Dataset> load_cifar100(const std::filesystem::path& dir);

/// Seeded class-stratified sample of n indices, n/num_classes per class, in
/// shuffled order. n must be a multiple of the class count.
std::vector<std::size_t> subset_indices(const Dataset& ds, std::size_t n, std::uint64_t seed);
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);
Dataset select(const Dataset& ds, std::span<const std::size_t> indices);

struct SyntheticOptions {
  std::size_t channels = 3;
  std::size_t blobs_per_class = 3;
  double noise = 0.5;     // std of additive per-pixel Gaussian noise
  std::size_t max_shift = 2;  // uniform translation in [-max_shift, max_shift]
  double blob_amplitude = 1.0;
};

/// Class-conditional Gaussian-blob images. Class prototypes depend only on
/// `seed`, so train and test splits drawn with the same seed share classes;
/// the samples themselves differ per split.
Dataset synthetic(std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed,
                  Split split = Split::Train, const SyntheticOptions& options = {});

}  // namespace reslab
