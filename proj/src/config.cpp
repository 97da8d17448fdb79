#include "kbqg/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace kbqg {

namespace {

const std::pair<Ablation, const char*> kAblationNames[] = {
    {Ablation::None, "none"},
    {Ablation::NoCtxCopy, "no_ctx_copy"},
    {Ablation::NoKbCopy, "no_kb_copy"},
    {Ablation::NoAnswerLoss, "no_answer_loss"},
    {Ablation::NoDiverseContext, "no_diverse_ctx"},
    {Ablation::NoFusion, "no_fusion"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects on/off, got '" + v + "'");
}

}  // namespace

Ablation parse_ablation(const std::string& s) {
  for (const auto& [a, name] : kAblationNames)
    if (s == name) return a;
  throw ConfigError("unknown ablation '" + s + "'");
}

std::string to_string(Ablation a) {
  for (const auto& [x, name] : kAblationNames)
    if (x == a) return name;
  return "none";
}

ModelConfig TrainConfig::model() const {
  ModelConfig m;
  m.d = d;
  m.heads = heads;
  m.layers = layers;
  m.dropout = dropout;
  m.ctx_copy = ablation != Ablation::NoCtxCopy;
  m.kb_copy = ablation != Ablation::NoKbCopy;
  m.fusion = ablation != Ablation::NoFusion;
  return m;
}

PrepareOptions TrainConfig::prepare() const {
  PrepareOptions p;
  p.context.diversified = ablation != Ablation::NoDiverseContext;
  p.subject_placeholder = ablation != Ablation::NoKbCopy;
  return p;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("config: decay must lie in (0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("config: lambda must be non-negative");
  if (batch < 1 || epochs < 0) throw ConfigError("config: batch must be positive and epochs non-negative");
  if (d < 2 || heads < 1 || d % heads != 0) throw ConfigError("config: d must be a positive multiple of heads");
  if (layers < 1) throw ConfigError("config: layers must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("config: dropout must lie in [0, 1)");
  if (!(clip > 0.0)) throw ConfigError("config: clip must be positive");
  if (!(transe_margin > 0.0)) throw ConfigError("config: transe_margin must be positive");
  if (!(transe_lr > 0.0) || transe_epochs < 0) throw ConfigError("config: invalid TransE schedule");
  if (min_count < 1 || max_len < 1 || beam < 1 || patience < 0 || eval_every < 1)
    throw ConfigError("config: min_count, max_len, beam and eval_every must be positive");
  if (softmin_tau < 0.0) throw ConfigError("config: softmin_tau must be non-negative");
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "lr") c.lr = to_double(key, v);
  else if (key == "decay") c.decay = to_double(key, v);
  else if (key == "batch") c.batch = to_int<int>(key, v);
  else if (key == "epochs") c.epochs = to_int<int>(key, v);
  else if (key == "lambda") c.lambda = to_double(key, v);
  else if (key == "seed") c.seed = to_int<std::uint64_t>(key, v);
  else if (key == "d") c.d = to_int<int>(key, v);
  else if (key == "heads") c.heads = to_int<int>(key, v);
  else if (key == "layers") c.layers = to_int<int>(key, v);
  else if (key == "dropout") c.dropout = to_double(key, v);
  else if (key == "clip") c.clip = to_double(key, v);
  else if (key == "transe") c.transe = to_bool(key, v);
  else if (key == "freeze_kb") c.freeze_kb = to_bool(key, v);
  else if (key == "transe_epochs") c.transe_epochs = to_int<int>(key, v);
  else if (key == "transe_margin") c.transe_margin = to_double(key, v);
  else if (key == "transe_lr") c.transe_lr = to_double(key, v);
  else if (key == "ablation") c.ablation = parse_ablation(v);
  else if (key == "min_count") c.min_count = to_int<int>(key, v);
  else if (key == "max_len") c.max_len = to_int<int>(key, v);
  else if (key == "beam") c.beam = to_int<int>(key, v);
  else if (key == "patience") c.patience = to_int<int>(key, v);
  else if (key == "eval_every") c.eval_every = to_int<int>(key, v);
  else if (key == "softmin_tau") c.softmin_tau = to_double(key, v);
  else if (key == "word_vectors") c.word_vectors = v;
  else if (key == "profile") {
    if (v == "desk") {
      c.d = 32, c.heads = 2, c.layers = 2, c.batch = 16;
    } else if (v == "large") {
      c.d = 200, c.heads = 4, c.layers = 5, c.batch = 200;
    } else {
      throw ConfigError("config: profile must be desk or large");
    }
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  return parse_config(in);
}

std::string config_text(const TrainConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "lr=" << c.lr << '\n'
    << "decay=" << c.decay << '\n'
    << "batch=" << c.batch << '\n'
    << "epochs=" << c.epochs << '\n'
    << "lambda=" << c.lambda << '\n'
    << "seed=" << c.seed << '\n'
    << "d=" << c.d << '\n'
    << "heads=" << c.heads << '\n'
    << "layers=" << c.layers << '\n'
    << "dropout=" << c.dropout << '\n'
    << "clip=" << c.clip << '\n'
    << "transe=" << (c.transe ? "on" : "off") << '\n'
    << "freeze_kb=" << (c.freeze_kb ? "on" : "off") << '\n'
    << "transe_epochs=" << c.transe_epochs << '\n'
    << "transe_margin=" << c.transe_margin << '\n'
    << "transe_lr=" << c.transe_lr << '\n'
    << "ablation=" << to_string(c.ablation) << '\n'
    << "min_count=" << c.min_count << '\n'
    << "max_len=" << c.max_len << '\n'
    << "beam=" << c.beam << '\n'
    << "patience=" << c.patience << '\n'
    << "eval_every=" << c.eval_every << '\n'
    << "softmin_tau=" << c.softmin_tau << '\n';
  if (!c.word_vectors.empty()) o << "word_vectors=" << c.word_vectors << '\n';
  return o.str();
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_text(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace kbqg
