#include "gbpll/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

namespace gbpll {

namespace {

constexpr char kMagic[] = "GBCKPT1\n";

bool same_bits(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_params(const ClassifierParams& a, const ClassifierParams& b) {
  if (a.w1.rows() != b.w1.rows() || a.w1.cols() != b.w1.cols() || a.w2.rows() != b.w2.rows())
    return false;
  const auto ba = a.blocks();
  const auto bb = b.blocks();
  for (std::size_t k = 0; k < ba.size(); ++k)
    if (!same_bits(ba[k], bb[k])) return false;
  return true;
}

void put_block(std::string& out, std::span<const double> values) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

}  // namespace

bool Checkpoint::operator==(const Checkpoint& other) const {
  return steps == other.steps && config.to_text() == other.config.to_text() &&
         same_params(params, other.params) && same_params(velocity, other.velocity) &&
         prior.momentum == other.prior.momentum &&
         same_bits({prior.values.data(), static_cast<std::size_t>(prior.values.size())},
                   {other.prior.values.data(), static_cast<std::size_t>(other.prior.values.size())}) &&
         confidence.values.rows() == other.confidence.values.rows() &&
         same_bits({confidence.values.data(), static_cast<std::size_t>(confidence.values.size())},
                   {other.confidence.values.data(),
                    static_cast<std::size_t>(other.confidence.values.size())});
}

Checkpoint make_checkpoint(const TrainResult& result, const TrainConfig& config) {
  Checkpoint c;
  c.params = result.params;
  c.velocity = result.optimizer.velocity();
  if (c.velocity.w1.size() == 0)
    c.velocity = ClassifierParams::zeros(c.params.input_dim(), c.params.hidden_dim(),
                                         c.params.class_count());
  c.steps = result.optimizer.steps();
  c.config = config;
  c.prior = result.prior;
  c.confidence = result.confidence;
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& p = ckpt.params;
  std::string out(kMagic);
  out += "input=" + std::to_string(p.input_dim()) + "\n";
  out += "hidden=" + std::to_string(p.hidden_dim()) + "\n";
  out += "classes=" + std::to_string(p.class_count()) + "\n";
  out += "samples=" + std::to_string(ckpt.confidence.rows()) + "\n";
  out += "steps=" + std::to_string(ckpt.steps) + "\n";
  out += "rng_seed=" + std::to_string(ckpt.config.seed) + "\n";
  {
    std::ostringstream os;
    os.precision(17);
    os << ckpt.prior.momentum;
    out += "prior_momentum=" + os.str() + "\n";
  }
  for (const auto& key : TrainConfig::keys()) out += "config." + key + "=" + ckpt.config.get(key) + "\n";
  out += "\n";
  for (auto b : p.blocks()) put_block(out, b);
  for (auto b : ckpt.velocity.blocks()) put_block(out, b);
  put_block(out, {ckpt.prior.values.data(), static_cast<std::size_t>(ckpt.prior.values.size())});
  put_block(out, {ckpt.confidence.values.data(), static_cast<std::size_t>(ckpt.confidence.values.size())});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint file: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  const std::size_t magic_len = sizeof(kMagic) - 1;
  if (buf.compare(0, magic_len, kMagic) != 0) throw DataError(where + "missing GBCKPT1 magic");

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
  auto num = [&](const std::string& key) -> std::uint64_t {
    auto it = header.find(key);
    if (it == header.end()) throw DataError(where + "header missing key '" + key + "'");
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw DataError(where + "bad integer for '" + key + "'");
    }
  };

  Checkpoint c;
  const auto in = num("input"), hidden = num("hidden"), classes = num("classes"), samples = num("samples");
  c.steps = num("steps");
  try {
    for (const auto& key : TrainConfig::keys()) {
      auto it = header.find("config." + key);
      if (it != header.end()) c.config.set(key, it->second);
    }
    c.prior.momentum = std::stod(header.at("prior_momentum"));
  } catch (const std::exception& e) {
    throw DataError(where + "bad header: " + e.what());
  }

  c.params = ClassifierParams::zeros(in, hidden, classes);
  c.velocity = ClassifierParams::zeros(in, hidden, classes);
  c.prior.values = Vector::Zero(static_cast<Eigen::Index>(classes));
  c.confidence.values = Matrix::Zero(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(classes));

  std::size_t expected = 2 * c.params.parameter_count() + classes + samples * classes;
  if (buf.size() - pos != expected * sizeof(double))
    throw DataError(where + "dimension mismatch: header implies " + std::to_string(expected) +
                    " float64 values, file body holds " + std::to_string(buf.size() - pos) + " bytes");
  const char* ptr = buf.data() + pos;
  auto read = [&](std::span<double> dst) {
    std::memcpy(dst.data(), ptr, dst.size() * sizeof(double));
    ptr += dst.size() * sizeof(double);
  };
  for (auto b : c.params.blocks()) read(b);
  for (auto b : c.velocity.blocks()) read(b);
  read({c.prior.values.data(), static_cast<std::size_t>(c.prior.values.size())});
  read({c.confidence.values.data(), static_cast<std::size_t>(c.confidence.values.size())});
  return c;
}

}  // namespace gbpll
