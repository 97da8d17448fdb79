#include "kbqg/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace kbqg {

namespace {

constexpr const char* kMagic = "kbqg-checkpoint";
constexpr int kVersion = 1;

void write_matrix(std::ostream& out, const char* kind, const std::string& name, const Mat& m) {
  out << kind << ' ' << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

std::string expect_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("checkpoint: missing " + what);
  return line;
}

Mat read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::string tok;
    if (!(in >> tok)) throw IngestError("checkpoint: tensor " + name + " truncated");
    char* end = nullptr;
    m.data()[i] = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str()) throw IngestError("checkpoint: bad number '" + tok + "' in " + name);
  }
  std::string rest;
  std::getline(in, rest);
  return m;
}

}  // namespace

Checkpoint make_checkpoint(const Trainer& trainer, const Vocab& vocab, const RmsProp& opt, std::mt19937_64& rng) {
  Checkpoint c;
  c.config = trainer.config();
  c.config_hash = config_hash(c.config);
  c.epoch = trainer.epochs_done();
  c.vocab = vocab;
  c.tensors = snapshot(trainer.params().store());
  c.accumulators = opt.accumulators();
  std::ostringstream s;
  s << rng;
  c.rng_state = s.str();
  return c;
}

void write_checkpoint(const Checkpoint& c, std::ostream& out) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "config_hash " << std::hex << c.config_hash << std::dec << '\n';
  out << "epoch " << c.epoch << '\n';
  const std::string cfg = config_text(c.config);
  out << "config " << std::count(cfg.begin(), cfg.end(), '\n') << '\n' << cfg;
  out << "vocab " << c.vocab.size() << '\n';
  for (const auto& t : c.vocab.tokens()) out << t << '\n';
  out << "rng " << c.rng_state << '\n';
  out << std::setprecision(17);
  for (const auto& [name, m] : c.tensors) write_matrix(out, "tensor", name, m);
  for (const auto& [name, m] : c.accumulators) write_matrix(out, "accum", name, m);
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint c;
  {
    std::istringstream h(expect_line(in, "header"));
    std::string magic;
    int version = 0;
    if (!(h >> magic >> version) || magic != kMagic || version != kVersion) throw IngestError("checkpoint: bad header");
  }
  {
    std::istringstream h(expect_line(in, "config hash"));
    std::string key;
    if (!(h >> key >> std::hex >> c.config_hash) || key != "config_hash") throw IngestError("checkpoint: bad hash line");
  }
  {
    std::istringstream h(expect_line(in, "epoch"));
    std::string key;
    if (!(h >> key >> c.epoch) || key != "epoch") throw IngestError("checkpoint: bad epoch line");
  }
  {
    std::istringstream h(expect_line(in, "config"));
    std::string key;
    int n = 0;
    if (!(h >> key >> n) || key != "config" || n < 0) throw IngestError("checkpoint: bad config section");
    std::ostringstream body;
    for (int i = 0; i < n; ++i) body << expect_line(in, "config line") << '\n';
    std::istringstream cfg(body.str());
    c.config = parse_config(cfg);
    if (config_hash(c.config) != c.config_hash) throw IngestError("checkpoint: config hash mismatch");
  }
  {
    std::istringstream h(expect_line(in, "vocab"));
    std::string key;
    int n = 0;
    if (!(h >> key >> n) || key != "vocab" || n < 0) throw IngestError("checkpoint: bad vocab section");
    for (int i = 0; i < n; ++i) c.vocab.add(expect_line(in, "vocab entry"));
    if (c.vocab.size() != n) throw IngestError("checkpoint: duplicate vocab entries");
  }
  {
    const std::string line = expect_line(in, "rng");
    if (line.rfind("rng ", 0) != 0) throw IngestError("checkpoint: bad rng line");
    c.rng_state = line.substr(4);
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line == "end") return c;
    std::istringstream h(line);
    std::string kind, name;
    Eigen::Index rows = 0, cols = 0;
    if (!(h >> kind >> name >> rows >> cols) || (kind != "tensor" && kind != "accum") || rows < 0 || cols < 0)
      throw IngestError("checkpoint: bad section '" + line + "'");
    auto& dst = kind == "tensor" ? c.tensors : c.accumulators;
    dst[name] = read_matrix(in, rows, cols, name);
  }
  throw IngestError("checkpoint: missing end marker");
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IngestError("cannot write " + file.string());
  write_checkpoint(c, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open " + file.string());
  return read_checkpoint(in);
}

void apply_tensors(const Checkpoint& c, ParamStore& params) {
  if (c.tensors.size() != params.size())
    throw IngestError("checkpoint: " + std::to_string(c.tensors.size()) + " tensors for " +
                      std::to_string(params.size()) + " parameters");
  for (const auto& [name, m] : c.tensors) {
    if (!params.contains(name)) throw IngestError("checkpoint: unknown tensor " + name);
    auto& p = params.at(name);
    if (p.value.rows() != m.rows() || p.value.cols() != m.cols())
      throw IngestError("checkpoint: tensor " + name + " has shape " + nd::shape_str(m) + ", model expects " +
                        nd::shape_str(p.value));
    p.value = m;
  }
}

void resume(Trainer& trainer, const Checkpoint& c) {
  apply_tensors(c, trainer.params().store());
  trainer.optimizer().accumulators() = c.accumulators;
  trainer.set_epochs_done(c.epoch);
  std::istringstream s(c.rng_state);
  s >> trainer.rng();
  if (!s) throw IngestError("checkpoint: bad generator state");
}

}  // namespace kbqg
