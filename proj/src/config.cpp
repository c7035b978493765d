#include "l1mbrl/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace l1mbrl {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so that the
// leftovers can be rejected.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError("expected an object", path_or_root());
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_ && j_->contains(key) && !(*j_)[key].is_null();
  }

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    if (!has(key)) return fallback;
    try {
      return (*j_)[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError("wrong type for '" + key + "'", at(key));
    }
  }

  Section child(const std::string& key) {
    return Section(has(key) ? &(*j_)[key] : nullptr, at(key));
  }

  const json* raw(const std::string& key) { return has(key) ? &(*j_)[key] : nullptr; }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  void finish() const {
    if (!j_) return;
    for (const auto& [key, value] : j_->items())
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "'", at(key));
  }

 private:
  std::string path_or_root() const { return path_.empty() ? "/" : path_; }

  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& what, const std::string& path) {
  if (!ok) throw ConfigError(what, path);
}

DisturbanceSpec read_disturbance(Section s) {
  DisturbanceSpec d;
  try {
    d.kind = disturbance_kind_from_string(s.get<std::string>("kind", "none"));
  } catch (const ConfigError& e) {
    if (!e.path().empty()) throw;
    throw ConfigError(e.what(), s.at("kind"));
  }
  d.amplitude = s.get("amplitude", 0.0);
  d.frequency = s.get("frequency", 0.0);
  d.sigma_a = s.get("sigma_a", 0.0);
  d.sigma_o = s.get("sigma_o", 0.0);
  s.finish();
  require(d.amplitude >= 0.0, "amplitude must be >= 0", s.at("amplitude"));
  require(d.frequency >= 0.0, "frequency must be >= 0", s.at("frequency"));
  require(d.sigma_a >= 0.0, "sigma_a must be >= 0", s.at("sigma_a"));
  require(d.sigma_o >= 0.0, "sigma_o must be >= 0", s.at("sigma_o"));
  return d;
}

json disturbance_json(const DisturbanceSpec& d) {
  return json{{"kind", to_string(d.kind)},
              {"amplitude", d.amplitude},
              {"frequency", d.frequency},
              {"sigma_a", d.sigma_a},
              {"sigma_o", d.sigma_o}};
}

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

RunConfig resolve(const json& root) {
  RunConfig cfg;
  Section top(&root, "");

  cfg.name = top.get<std::string>("name", cfg.name);
  require(valid_name(cfg.name), "name must be non-empty and use only [A-Za-z0-9_.-]", "/name");

  {
    Section env = top.child("env");
    cfg.env_name = env.get<std::string>("name", cfg.env_name);
    cfg.env_overrides = env.get<std::map<std::string, double>>("overrides", {});
    env.finish();
  }
  cfg.disturbance = read_disturbance(top.child("disturbance"));

  {
    Section s = top.child("model");
    TrainOptions& m = cfg.model;
    m.members = s.get("members", m.members);
    m.hidden = s.get("hidden", m.hidden);
    m.learning_rate = s.get("learning_rate", m.learning_rate);
    m.batch_size = s.get("batch_size", m.batch_size);
    m.val_fraction = s.get("val_fraction", m.val_fraction);
    m.patience = s.get("patience", m.patience);
    m.max_epochs = s.get("max_epochs", m.max_epochs);
    s.finish();
    require(m.members >= 1, "members must be >= 1", s.at("members"));
    require(std::all_of(m.hidden.begin(), m.hidden.end(), [](int w) { return w >= 1; }),
            "hidden widths must be >= 1", s.at("hidden"));
    require(m.learning_rate > 0.0, "learning_rate must be > 0", s.at("learning_rate"));
    require(m.batch_size >= 1, "batch_size must be >= 1", s.at("batch_size"));
    require(m.val_fraction > 0.0 && m.val_fraction < 1.0, "val_fraction must lie in (0, 1)",
            s.at("val_fraction"));
    require(m.patience >= 1, "patience must be >= 1", s.at("patience"));
    require(m.max_epochs >= 1, "max_epochs must be >= 1", s.at("max_epochs"));
  }

  {
    Section s = top.child("mpc");
    cfg.mpc.horizon = s.get("horizon", cfg.mpc.horizon);
    cfg.mpc.n_candidates = s.get("n_candidates", cfg.mpc.n_candidates);
    s.finish();
    cfg.mpc.validate();
  }

  EnvSpec env;
  try {
    env = cfg.make_env();
  } catch (const ConfigError& e) {
    if (!e.path().empty()) throw;
    throw ConfigError(e.what(), "/env/name");
  }

  {
    Section s = top.child("l1");
    const bool has_diag = s.has("as_diag");
    const bool has_lambda = s.has("lambda");
    require(!(has_diag && has_lambda), "give either as_diag or lambda, not both", s.at("lambda"));
    if (has_diag) {
      cfg.as_diag = s.get<std::vector<double>>("as_diag", {});
      require(static_cast<int>(cfg.as_diag.size()) == env.n,
              "as_diag must have one entry per state", s.at("as_diag"));
    } else {
      cfg.as_diag.assign(static_cast<std::size_t>(env.n), s.get("lambda", -1.0));
    }
    require(std::all_of(cfg.as_diag.begin(), cfg.as_diag.end(), [](double v) { return v < 0.0; }),
            "As diagonal entries must be < 0", s.at(has_diag ? "as_diag" : "lambda"));
    cfg.omega_factor = s.get("omega_factor", cfg.omega_factor);
    require(cfg.omega_factor > 0.0 && cfg.omega_factor < 2.0, "omega_factor must lie in (0, 2)",
            s.at("omega_factor"));
    cfg.eps_a = s.get("eps_a", env.default_eps_a);
    require(cfg.eps_a > 0.0, "eps_a must be > 0", s.at("eps_a"));
    s.finish();
  }

  {
    Section s = top.child("loop");
    LoopConfig& l = cfg.loop;
    l.iterations = s.get("iterations", l.iterations);
    l.episodes_per_iteration = s.get("episodes_per_iteration", l.episodes_per_iteration);
    l.eval_episodes = s.get("eval_episodes", l.eval_episodes);
    l.l1_train = s.get("l1_train", l.l1_train);
    l.l1_test = s.get("l1_test", l.l1_test);
    cfg.ablation_grid = s.get("ablation_grid", cfg.ablation_grid);
    cfg.report_window = s.get("report_window", cfg.report_window);
    s.finish();
    l.validate();
    require(cfg.report_window >= 1, "report_window must be >= 1", s.at("report_window"));
  }

  if (const json* seeds = top.raw("seeds")) {
    require(seeds->is_array(), "seeds must be an array", "/seeds");
    cfg.seeds.clear();
    for (const auto& v : *seeds) {
      require(v.is_number_unsigned(), "seeds must be non-negative integers", "/seeds");
      cfg.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  require(!cfg.seeds.empty(), "seeds must not be empty", "/seeds");
  cfg.output_dir = top.get("output_dir", cfg.output_dir);

  {
    Section s = top.child("verify");
    VerifyConfig& v = cfg.verify;
    v.ts_grid = s.get("ts_grid", v.ts_grid);
    v.t_max = s.get("t_max", v.t_max);
    v.eps_a = s.get("eps_a", v.eps_a);
    v.eps_l = s.get("eps_l", v.eps_l);
    v.lambda = s.get("lambda", v.lambda);
    v.omega_factor = s.get("omega_factor", v.omega_factor);
    s.finish();
    require(!v.ts_grid.empty(), "ts_grid must not be empty", s.at("ts_grid"));
    require(std::all_of(v.ts_grid.begin(), v.ts_grid.end(), [](double t) { return t > 0.0; }),
            "ts_grid entries must be > 0", s.at("ts_grid"));
    require(v.t_max > 0.0, "t_max must be > 0", s.at("t_max"));
    require(v.eps_a > 0.0, "eps_a must be > 0", s.at("eps_a"));
    require(v.eps_l >= 0.0, "eps_l must be >= 0", s.at("eps_l"));
    require(v.lambda < 0.0, "lambda must be < 0", s.at("lambda"));
    require(v.omega_factor > 0.0 && v.omega_factor < 2.0, "omega_factor must lie in (0, 2)",
            s.at("omega_factor"));
  }

  {
    Section s = top.child("compare");
    cfg.compare.sim_to_real = s.get("sim_to_real", false);
    if (const json* cols = s.raw("columns")) {
      require(cols->is_array() && !cols->empty(), "columns must be a non-empty array",
              s.at("columns"));
      for (std::size_t i = 0; i < cols->size(); ++i) {
        Section c(&(*cols)[i], s.at("columns") + "/" + std::to_string(i));
        CompareColumn col;
        col.label = c.get<std::string>("label", "");
        require(!col.label.empty(), "column label must not be empty", c.at("label"));
        col.disturbance = read_disturbance(c.child("disturbance"));
        c.finish();
        cfg.compare.columns.push_back(std::move(col));
      }
    } else {
      cfg.compare.columns = CompareConfig::default_columns();
    }
    s.finish();
  }

  top.finish();
  return cfg;
}

int line_of(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  bool found = false;
  std::istringstream segs(path);
  std::string seg;
  while (std::getline(segs, seg, '/')) {
    if (seg.empty() || std::all_of(seg.begin(), seg.end(), ::isdigit)) continue;
    const std::size_t at = text.find("\"" + seg + "\"", pos);
    if (at == std::string::npos) break;
    pos = at;
    found = true;
  }
  if (!found) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

int line_of_byte(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

}  // namespace

std::vector<CompareColumn> CompareConfig::default_columns() {
  CompareColumn clean{"noise-free", {}};
  CompareColumn act{"sigma_a=0.1", {}};
  act.disturbance.kind = DisturbanceKind::kActionNoise;
  act.disturbance.sigma_a = 0.1;
  CompareColumn obs{"sigma_o=0.1", {}};
  obs.disturbance.kind = DisturbanceKind::kObsNoise;
  obs.disturbance.sigma_o = 0.1;
  return {clean, act, obs};
}

EnvSpec RunConfig::make_env() const { return l1mbrl::make_env(env_name, env_overrides); }

L1Configd RunConfig::make_l1(const EnvSpec& env) const {
  L1Configd cfg;
  cfg.as_diag = Eigen::Map<const Vector>(as_diag.data(), static_cast<Eigen::Index>(as_diag.size()));
  cfg.ts = env.dt;
  cfg.omega = omega_factor / env.dt;
  cfg.eps_a = eps_a;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), "/l1");
  }
  if (cfg.as_diag.size() != env.n) throw ConfigError("as_diag size differs from the state dimension", "/l1/as_diag");
  return cfg;
}

SyntheticSpec RunConfig::make_synthetic() const {
  SyntheticSpec s = default_synthetic_spec();
  s.ts_grid = verify.ts_grid;
  s.t_max = verify.t_max;
  s.eps_a = verify.eps_a;
  s.eps_l = verify.eps_l;
  s.lambda = verify.lambda;
  s.omega_factor = verify.omega_factor;
  return s;
}

json to_json(const RunConfig& cfg) {
  json cols = json::array();
  for (const auto& c : cfg.compare.columns)
    cols.push_back({{"label", c.label}, {"disturbance", disturbance_json(c.disturbance)}});
  return json{
      {"name", cfg.name},
      {"env", {{"name", cfg.env_name}, {"overrides", cfg.env_overrides}}},
      {"disturbance", disturbance_json(cfg.disturbance)},
      {"model",
       {{"members", cfg.model.members},
        {"hidden", cfg.model.hidden},
        {"learning_rate", cfg.model.learning_rate},
        {"batch_size", cfg.model.batch_size},
        {"val_fraction", cfg.model.val_fraction},
        {"patience", cfg.model.patience},
        {"max_epochs", cfg.model.max_epochs}}},
      {"mpc", {{"horizon", cfg.mpc.horizon}, {"n_candidates", cfg.mpc.n_candidates}}},
      {"l1", {{"as_diag", cfg.as_diag}, {"omega_factor", cfg.omega_factor}, {"eps_a", cfg.eps_a}}},
      {"loop",
       {{"iterations", cfg.loop.iterations},
        {"episodes_per_iteration", cfg.loop.episodes_per_iteration},
        {"eval_episodes", cfg.loop.eval_episodes},
        {"l1_train", cfg.loop.l1_train},
        {"l1_test", cfg.loop.l1_test},
        {"ablation_grid", cfg.ablation_grid},
        {"report_window", cfg.report_window}}},
      {"seeds", cfg.seeds},
      {"output_dir", cfg.output_dir},
      {"verify",
       {{"ts_grid", cfg.verify.ts_grid},
        {"t_max", cfg.verify.t_max},
        {"eps_a", cfg.verify.eps_a},
        {"eps_l", cfg.verify.eps_l},
        {"lambda", cfg.verify.lambda},
        {"omega_factor", cfg.verify.omega_factor}}},
      {"compare", {{"sim_to_real", cfg.compare.sim_to_real}, {"columns", cols}}},
  };
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

RunConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ":" + std::to_string(line_of_byte(text, e.byte)) +
                      ": malformed JSON: " + e.what());
  }
  try {
    return resolve(root);
  } catch (const ConfigError& e) {
    const int line = line_of(text, e.path());
    std::string where = source + ":" + (line > 0 ? std::to_string(line) + ":" : "");
    std::string what = where + " " + e.what();
    if (!e.path().empty()) what += " (at " + e.path() + ")";
    throw ConfigError(what, e.path());
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace l1mbrl
