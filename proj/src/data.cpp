#include "reslab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace reslab {

Tensor<float> Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t m = image_numel();
  std::vector<float> out(indices.size() * m);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto src = image(indices[b]);
    std::copy(src.begin(), src.end(), out.begin() + b * m);
  }
  return Tensor<float>({indices.size(), channels, height, width}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

std::size_t record_bytes(CifarFormat fmt) {
  return fmt == CifarFormat::Cifar10 ? 1 + kCifarPixels : 2 + kCifarPixels;
}

std::vector<CifarRecord> decode_cifar(std::span<const std::uint8_t> bytes, CifarFormat fmt,
                                      std::size_t expected_records, const std::string& source) {
  const std::size_t rb = record_bytes(fmt);
  if (expected_records != 0 && bytes.size() != expected_records * rb) {
    throw DataError(source + ": expected " + std::to_string(expected_records * rb) +
                    " bytes (" + std::to_string(expected_records) + " records of " +
                    std::to_string(rb) + "), got " + std::to_string(bytes.size()));
  }
  if (bytes.size() % rb != 0) {
    throw DataError(source + ": size " + std::to_string(bytes.size()) +
                    " is not a multiple of the " + std::to_string(rb) + "-byte record length");
  }
  const std::size_t n = bytes.size() / rb;
  std::vector<CifarRecord> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * rb;
    auto& rec = out[r];
    if (fmt == CifarFormat::Cifar10) {
      rec.label = bytes[off];
      if (rec.label > 9) {
        throw DataError(source + ": corrupt record " + std::to_string(r) + " at byte offset " +
                        std::to_string(off) + ": label " + std::to_string(rec.label) + " > 9");
      }
      std::copy_n(bytes.begin() + off + 1, kCifarPixels, rec.pixels.begin());
    } else {
      rec.coarse_label = bytes[off];
      rec.label = bytes[off + 1];
      if (rec.coarse_label > 19 || rec.label > 99) {
        throw DataError(source + ": corrupt record " + std::to_string(r) + " at byte offset " +
                        std::to_string(off) + ": labels " + std::to_string(rec.coarse_label) +
                        "/" + std::to_string(rec.label) + " out of range");
      }
      std::copy_n(bytes.begin() + off + 2, kCifarPixels, rec.pixels.begin());
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar(std::span<const CifarRecord> records, CifarFormat fmt) {
  std::vector<std::uint8_t> out;
  out.reserve(records.size() * record_bytes(fmt));
  for (const auto& rec : records) {
    if (fmt == CifarFormat::Cifar100) out.push_back(rec.coarse_label);
    out.push_back(rec.label);
    out.insert(out.end(), rec.pixels.begin(), rec.pixels.end());
  }
  return out;
}

std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path, CifarFormat fmt,
                                         std::size_t expected_records) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_cifar(bytes, fmt, expected_records, path.string());
}

Dataset to_dataset(std::span<const CifarRecord> records, CifarFormat fmt, Split split) {
  Dataset ds;
  ds.num_classes = fmt == CifarFormat::Cifar10 ? 10 : 100;
  ds.split = split;
  ds.images.resize(records.size() * kCifarPixels);
  ds.labels.reserve(records.size());
  const std::size_t plane = 32 * 32;
  for (std::size_t r = 0; r < records.size(); ++r) {
    ds.labels.push_back(records[r].label);
    float* dst = ds.images.data() + r * kCifarPixels;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = records[r].pixels[c * plane + i] / 255.0;
        dst[c * plane + i] = static_cast<float>((v - kCifarMean[c]) / kCifarStd[c]);
      }
    }
  }
  return ds;
}

namespace {

void append(Dataset& into, const Dataset& from) {
  into.images.insert(into.images.end(), from.images.begin(), from.images.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  Dataset train;
  train.split = Split::Train;
  for (int b = 1; b <= 5; ++b) {
    auto recs = read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                                CifarFormat::Cifar10);
    append(train, to_dataset(recs, CifarFormat::Cifar10, Split::Train));
  }
  auto test_recs = read_cifar_file(dir / "test_batch.bin", CifarFormat::Cifar10);
  return {std::move(train), to_dataset(test_recs, CifarFormat::Cifar10, Split::Test)};
}

std::pair<Dataset, Dataset> load_cifar100(const std::filesystem::path& dir) {
  auto train = read_cifar_file(dir / "train.bin", CifarFormat::Cifar100, 50000);
  auto test = read_cifar_file(dir / "test.bin", CifarFormat::Cifar100, 10000);
  return {to_dataset(train, CifarFormat::Cifar100, Split::Train),
          to_dataset(test, CifarFormat::Cifar100, Split::Test)};
}

std::vector<std::size_t> subset_indices(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  const std::size_t k = ds.num_classes;
  if (n > ds.size()) {
    throw DataError("subset of " + std::to_string(n) + " from a dataset of " +
                    std::to_string(ds.size()));
  }
  if (k == 0 || n % k != 0) {
    throw DataError("stratified subset size " + std::to_string(n) +
                    " is not divisible by the class count " + std::to_string(k));
  }
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);

  std::mt19937_64 rng(seed);
  const std::size_t per = n / k;
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t c = 0; c < k; ++c) {
    auto& pool = by_class[c];
    if (pool.size() < per) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                      " samples, stratified subset needs " + std::to_string(per));
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

Dataset select(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  out.images.reserve(indices.size() * ds.image_numel());
  for (auto i : indices) {
    auto img = ds.image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(ds.labels.at(i));
  }
  return out;
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  auto idx = subset_indices(ds, n, seed);
  return select(ds, idx);
}

Dataset synthetic(std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed,
                  Split split, const SyntheticOptions& opt) {
  if (classes == 0 || size == 0 || opt.channels == 0) {
    throw DataError("synthetic data needs at least one class, channel and pixel");
  }
  const std::size_t C = opt.channels;
  const std::size_t plane = size * size;
  const double sz = static_cast<double>(size);

  std::mt19937_64 proto_rng(seed);
  std::uniform_real_distribution<double> pos(0.0, sz);
  std::uniform_real_distribution<double> width(sz / 8.0, sz / 4.0);
  std::normal_distribution<double> amp(0.0, opt.blob_amplitude);
  std::vector<std::vector<double>> protos(classes, std::vector<double>(C * plane, 0.0));
  for (auto& p : protos) {
    for (std::size_t b = 0; b < opt.blobs_per_class; ++b) {
      const double cy = pos(proto_rng), cx = pos(proto_rng), s = width(proto_rng);
      std::vector<double> a(C);
      for (auto& v : a) v = amp(proto_rng);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          const double e = std::exp(-d2 / (2 * s * s));
          for (std::size_t c = 0; c < C; ++c) p[c * plane + y * size + x] += a[c] * e;
        }
      }
    }
  }

  std::seed_seq sseq{seed, static_cast<std::uint64_t>(split == Split::Train ? 1 : 2)};
  std::mt19937_64 rng(sseq);
  std::normal_distribution<double> noise(0.0, opt.noise);
  const int ms = static_cast<int>(opt.max_shift);
  std::uniform_int_distribution<int> shift(-ms, ms);

  Dataset ds;
  ds.channels = C;
  ds.height = size;
  ds.width = size;
  ds.num_classes = classes;
  ds.split = split;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % classes);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
  ds.images.resize(n * C * plane);
  const int isz = static_cast<int>(size);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = protos[ds.labels[i]];
    const int dy = shift(rng), dx = shift(rng);
    float* dst = ds.images.data() + i * C * plane;
    for (std::size_t c = 0; c < C; ++c) {
      for (int y = 0; y < isz; ++y) {
        for (int x = 0; x < isz; ++x) {
          const int sy = y - dy, sx = x - dx;
          double v = 0.0;
          if (sy >= 0 && sy < isz && sx >= 0 && sx < isz) v = p[c * plane + sy * size + sx];
          dst[c * plane + y * size + x] = static_cast<float>(v + noise(rng));
        }
      }
    }
  }
  return ds;
}

}  // namespace reslab
