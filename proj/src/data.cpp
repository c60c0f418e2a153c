#include "gbpll/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace gbpll {

namespace {

constexpr char kMagic[] = "GBPLL1\n";

// Sub-seed streams for make_longtail_dataset.
constexpr std::uint64_t kBlobStream = 1;
constexpr std::uint64_t kFlipStream = 2;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

CandidateMask::CandidateMask(std::size_t rows, std::size_t labels)
    : rows_(rows), labels_(labels), stride_((labels + 7) / 8), bits_(rows * stride_, 0) {}

void CandidateMask::set(std::size_t row, std::size_t label, bool value) {
  auto& byte = bits_[row * stride_ + label / 8];
  const auto bit = static_cast<std::uint8_t>(1U << (label % 8));
  byte = value ? static_cast<std::uint8_t>(byte | bit) : static_cast<std::uint8_t>(byte & ~bit);
}

std::size_t CandidateMask::count(std::size_t row) const {
  std::size_t n = 0;
  for (auto b : row_bytes(row)) n += static_cast<std::size_t>(std::popcount(b));
  return n;
}

Matrix CandidateMask::dense() const {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(labels_));
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < labels_; ++j)
      if (test(i, j)) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
  return m;
}

PllDataset::PllDataset(Matrix features, CandidateMask candidates,
                       std::vector<std::uint32_t> true_labels, DatasetMeta meta)
    : features_(std::move(features)),
      candidates_(std::move(candidates)),
      true_labels_(std::move(true_labels)),
      meta_(meta) {
  const auto n = true_labels_.size();
  if (static_cast<std::size_t>(features_.rows()) != n || candidates_.rows() != n)
    throw DataError("dimension mismatch: " + std::to_string(features_.rows()) + " feature rows, " +
                    std::to_string(candidates_.rows()) + " candidate rows, " + std::to_string(n) +
                    " labels");
  for (std::size_t i = 0; i < n; ++i) {
    if (candidates_.count(i) == 0)
      throw DataError("empty candidate set at row " + std::to_string(i));
    if (true_labels_[i] >= candidates_.labels())
      throw DataError("true label out of range at row " + std::to_string(i));
    if (!candidates_.test(i, true_labels_[i]))
      throw DataError("true label missing from candidate set at row " + std::to_string(i));
  }
}

std::vector<std::size_t> PllDataset::class_counts() const {
  std::vector<std::size_t> counts(class_count(), 0);
  for (auto y : true_labels_) ++counts[y];
  return counts;
}

bool PllDataset::operator==(const PllDataset& other) const {
  return meta_ == other.meta_ && true_labels_ == other.true_labels_ &&
         candidates_ == other.candidates_ && features_.rows() == other.features_.rows() &&
         features_.cols() == other.features_.cols() &&
         std::equal(features_.data(), features_.data() + features_.size(), other.features_.data(),
                    [](double a, double b) { return std::bit_cast<std::uint64_t>(a) ==
                                                    std::bit_cast<std::uint64_t>(b); });
}

std::vector<std::size_t> longtail_counts(const LongTailSpec& spec) {
  if (spec.class_count < 2) throw InvalidArgument("longtail_counts: need at least 2 classes");
  if (!(spec.imbalance_ratio >= 1.0))
    throw InvalidArgument("longtail_counts: imbalance ratio must be >= 1");
  if (spec.max_count < 1) throw InvalidArgument("longtail_counts: max_count must be >= 1");

  std::vector<std::size_t> counts(spec.class_count);
  const double steps = static_cast<double>(spec.class_count - 1);
  for (std::size_t j = 0; j < spec.class_count; ++j) {
    const double n = static_cast<double>(spec.max_count) *
                     std::pow(spec.imbalance_ratio, -static_cast<double>(j) / steps);
    counts[j] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
  }
  return counts;
}

CandidateMask corrupt_labels(std::span<const std::uint32_t> true_labels, std::size_t class_count,
                             double flip_prob, std::uint64_t seed) {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
    throw InvalidArgument("corrupt_labels: flip probability must lie in [0, 1]");
  CandidateMask mask(true_labels.size(), class_count);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    if (true_labels[i] >= class_count)
      throw InvalidArgument("corrupt_labels: label out of range at row " + std::to_string(i));
    for (std::size_t j = 0; j < class_count; ++j) {
      if (j == true_labels[i]) {
        mask.set(i, j);
        continue;
      }
      // Always draw so the stream position does not depend on flip_prob edge cases.
      const double u = unit(rng);
      if (u < flip_prob) mask.set(i, j);
    }
  }
  return mask;
}

Matrix blob_centers(std::size_t class_count, std::size_t dim, double separation) {
  if (dim < 2) throw InvalidArgument("blob_centers: dim must be >= 2");
  if (!(separation > 0.0)) throw InvalidArgument("blob_centers: separation must be positive");
  Matrix centers = Matrix::Zero(static_cast<Eigen::Index>(class_count), static_cast<Eigen::Index>(dim));
  if (class_count <= dim) {
    // Scaled basis vectors: pairwise distance is exactly `separation`.
    for (std::size_t k = 0; k < class_count; ++k)
      centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) =
          separation / std::numbers::sqrt2;
  } else {
    // Regular polygon in the first two coordinates; adjacent chord = separation.
    const double radius =
        separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(class_count)));
    for (std::size_t k = 0; k < class_count; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(class_count);
      centers(static_cast<Eigen::Index>(k), 0) = radius * std::cos(angle);
      centers(static_cast<Eigen::Index>(k), 1) = radius * std::sin(angle);
    }
  }
  return centers;
}

BlobSample synth_blobs(std::span<const std::size_t> class_counts, std::size_t class_count,
                       std::size_t dim, double separation, double noise_scale,
                       std::uint64_t seed) {
  if (class_counts.size() != class_count)
    throw InvalidArgument("synth_blobs: expected one count per class");
  if (!(noise_scale >= 0.0)) throw InvalidArgument("synth_blobs: noise scale must be >= 0");
  std::size_t total = 0;
  for (auto c : class_counts) {
    if (c == 0) throw InvalidArgument("synth_blobs: class counts must be positive");
    total += c;
  }
  const Matrix centers = blob_centers(class_count, dim, separation);

  BlobSample out;
  out.features.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(dim));
  out.labels.reserve(total);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < class_count; ++k) {
    for (std::size_t s = 0; s < class_counts[k]; ++s, ++row) {
      for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(dim); ++c)
        out.features(row, c) = centers(static_cast<Eigen::Index>(k), c) + noise_scale * gauss(rng);
      out.labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  return out;
}

PllDataset make_longtail_dataset(const LongTailSpec& spec, std::size_t dim, double separation,
                                 double noise_scale) {
  const auto counts = longtail_counts(spec);
  auto blobs = synth_blobs(counts, spec.class_count, dim, separation, noise_scale,
                           mix_seed(spec.seed, kBlobStream));
  auto mask = corrupt_labels(blobs.labels, spec.class_count, spec.flip_prob,
                             mix_seed(spec.seed, kFlipStream));
  return PllDataset(std::move(blobs.features), std::move(mask), std::move(blobs.labels),
                    DatasetMeta{spec.seed, spec.imbalance_ratio, spec.flip_prob});
}

void save_dataset(const PllDataset& ds, const std::filesystem::path& path) {
  const auto n = ds.sample_count();
  const auto d = ds.dim();
  std::string out(kMagic);
  out += "n=" + std::to_string(n) + "\n";
  out += "l=" + std::to_string(ds.class_count()) + "\n";
  out += "d=" + std::to_string(d) + "\n";
  out += "seed=" + std::to_string(ds.meta().seed) + "\n";
  out += "gamma=" + format_double(ds.meta().gamma) + "\n";
  out += "psi=" + format_double(ds.meta().psi) + "\n";
  out += "\n";
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      put_le<double>(out, ds.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
  for (std::size_t i = 0; i < n; ++i) {
    auto bytes = ds.candidates().row_bytes(i);
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
  for (auto y : ds.true_labels()) put_le<std::uint32_t>(out, y);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

PllDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open dataset file: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";

  const std::size_t magic_len = sizeof(kMagic) - 1;
  if (buf.compare(0, magic_len, kMagic) != 0) throw DataError(where + "missing GBPLL1 magic");

  std::map<std::string, std::string> header;
  std::size_t pos = magic_len;
  for (;;) {
    const auto eol = buf.find('\n', pos);
    if (eol == std::string::npos) throw DataError(where + "unterminated header");
    const std::string line = buf.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(where + "malformed header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }

  auto field = [&](const std::string& key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) throw DataError(where + "header missing key '" + key + "'");
    return it->second;
  };
  auto as_size = [&](const std::string& key) -> std::size_t {
    const auto& s = field(key);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw DataError(where + "bad integer for '" + key + "': " + s);
    }
  };
  auto as_double = [&](const std::string& key) -> double {
    const auto& s = field(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw DataError(where + "bad number for '" + key + "': " + s);
    }
  };

  const auto n = as_size("n");
  const auto l = as_size("l");
  const auto d = as_size("d");
  DatasetMeta meta{static_cast<std::uint64_t>(as_size("seed")), as_double("gamma"),
                   as_double("psi")};
  if (l == 0) throw DataError(where + "l must be positive");

  const std::size_t stride = (l + 7) / 8;
  const std::size_t feature_bytes = n * d * sizeof(double);
  const std::size_t mask_bytes = n * stride;
  const std::size_t label_bytes = n * sizeof(std::uint32_t);
  const std::size_t body = buf.size() - pos;
  if (body != feature_bytes + mask_bytes + label_bytes)
    throw DataError(where + "dimension mismatch: header declares n=" + std::to_string(n) +
                    " l=" + std::to_string(l) + " d=" + std::to_string(d) + " (" +
                    std::to_string(feature_bytes + mask_bytes + label_bytes) +
                    " body bytes) but file holds " + std::to_string(body) + " body bytes");

  const char* p = buf.data() + pos;
  Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c, p += sizeof(double))
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = get_le<double>(p);

  CandidateMask mask(n, l);
  const auto spare_bits = static_cast<unsigned>(stride * 8 - l);
  for (std::size_t i = 0; i < n; ++i, p += stride) {
    auto row = mask.row_bytes(i);
    std::memcpy(row.data(), p, stride);
    if (spare_bits > 0 && (row[stride - 1] >> (8 - spare_bits)) != 0)
      throw DataError(where + "candidate bits beyond l set at row " + std::to_string(i));
    if (mask.count(i) == 0) throw DataError(where + "empty candidate set at row " + std::to_string(i));
  }

  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i, p += sizeof(std::uint32_t)) labels[i] = get_le<std::uint32_t>(p);

  try {
    return PllDataset(std::move(features), std::move(mask), std::move(labels), meta);
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
}

}  // namespace gbpll
