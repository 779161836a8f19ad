#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catchain/csv.hpp"
#include "catchain/error.hpp"
#include "catchain/kernels.hpp"
#include "catchain/model_zoo.hpp"
#include "catchain/simulate.hpp"

namespace catchain {

using Json = nlohmann::json;

/// Model block of a run configuration. Parametric families are held as a
/// ModelSpec; "markov", "table" and "b_sequence" are stored directly.
struct ModelConfig {
  std::string kind = "markov";
  std::optional<ModelSpec> spec;
  std::vector<std::vector<double>> P;  // markov
  int categories = 2;                  // table
  std::size_t memory = 1;              // table
  std::vector<double> table;           // table
  std::vector<double> b, e;            // b_sequence
  double tail_rate = 0.0;              // b_sequence: geometric tail when > 0
  std::size_t truncation_lag = 60;

  bool has_kernel() const { return kind != "b_sequence"; }
  std::size_t cov_dim() const;
  KernelHandle kernel(std::size_t horizon = 200) const;
};

struct SimulateParams {
  std::size_t length = 100;
  double eps = 1e-3;
};

struct BoundsParams {
  std::size_t horizon = 200;
  std::size_t n_max = 40;
  CouplingMetric metric = CouplingMetric::L1;
  double p = std::numeric_limits<double>::infinity();
};

struct VerifyParams {
  std::size_t replicas = 20000;
  std::size_t length = 12;  // time steps checked by the exact and Monte Carlo suites
  std::size_t beta_n = 10;
  double sigmas = 4.0;
};

struct FitParams {
  std::string data;               // CSV path; empty selects self-test mode
  std::size_t self_test_length = 5000;
  double self_test_eps = 1e-6;
  double tolerance = 0.15;        // self-test: max |theta_hat - theta*|
  std::size_t p = 1, q = 1;
  bool fit_intercept = false;
  std::string link = "logistic";
  bool semiparametric = false;
  double bandwidth = 0.0;
};

struct RunConfig {
  ModelConfig model;
  CovariateModel covariates;
  std::uint64_t seed = 1;
  std::string output = "out";
  SimulateParams simulate;
  BoundsParams bounds;
  VerifyParams verify;
  FitParams fit;
};

namespace detail {

/// Reads keys from a JSON object and rejects whatever is left unread.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string block) : j_(j), block_(std::move(block)) {
    if (!j.is_object()) throw ConfigError("'" + block_ + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError("missing key '" + key + "' in '" + block_ + "'");
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const Json& v = raw(key);
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("key '" + key + "' in '" + block_ + "' has the wrong type");
    }
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    return has(key) ? get<T>(key) : fallback;
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError("key '" + key + "' in '" + block_ + "' must be a nonnegative integer");
    }
    return v.get<std::size_t>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in '" + block_ + "'");
    }
  }

 private:
  const Json& j_;
  std::string block_;
  std::set<std::string> seen_;
};

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = 0;
  if (rows > 0) {
    if (!j[0].is_array()) throw ConfigError(what + " must be an array of rows");
    cols = static_cast<Eigen::Index>(j[0].size());
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols) throw ConfigError(what + ": ragged rows");
    for (Eigen::Index k = 0; k < cols; ++k) {
      if (!r[static_cast<std::size_t>(k)].is_number()) throw ConfigError(what + ": entries must be numbers");
      m(i, k) = r[static_cast<std::size_t>(k)].get<double>();
    }
  }
  return m;
}

inline std::vector<Eigen::MatrixXd> matrices_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be a list of matrices");
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(matrix_from_json(j[i], what + "[" + std::to_string(i) + "]"));
  return out;
}

inline Json matrices_to_json(const std::vector<Eigen::MatrixXd>& ms) {
  Json out = Json::array();
  for (const auto& m : ms) out.push_back(matrix_to_json(m));
  return out;
}

inline Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + ": entries must be numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline LinkFunction link_from_name(const std::string& name) {
  try {
    return LinkFunction::from_name(name);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

inline double moment_from_json(const Json& v) {
  if (v.is_string() && v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  if (v.is_number() && v.get<double>() >= 1.0) return v.get<double>();
  throw ConfigError("bounds.p must be a number >= 1 or \"inf\"");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model block.

inline std::size_t ModelConfig::cov_dim() const {
  if (!spec) return 0;
  return std::visit(
      [](const auto& s) -> std::size_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, MultinomialSpec> || std::is_same_v<T, DiscreteChoiceSpec>) {
          return static_cast<std::size_t>(s.Gamma.cols());
        } else {
          return s.gamma.size();
        }
      },
      *spec);
}

inline KernelHandle ModelConfig::kernel(std::size_t horizon) const {
  if (kind == "markov") return make_markov_kernel("markov", P);
  if (kind == "table") return make_table_kernel("table", categories, memory, table);
  if (spec) {
    KernelOptions ko;
    ko.truncation_lag = truncation_lag;
    ko.horizon = horizon;
    return model_to_kernel(*spec, ko);
  }
  throw UnsupportedError("model kind '" + kind + "' has no kernel (only b and e are given)");
}

inline ModelConfig model_from_json(const Json& j) {
  detail::ObjectReader r(j, "model");
  ModelConfig m;
  m.kind = r.get<std::string>("kind");
  const std::string& k = m.kind;
  auto vec = [&](const char* key) { return r.get<std::vector<double>>(key, {}); };
  if (k == "markov") {
    m.P = r.get<std::vector<std::vector<double>>>("P");
  } else if (k == "table") {
    m.categories = r.get<int>("categories");
    m.memory = r.count("memory", 1);
    m.table = r.get<std::vector<double>>("table");
  } else if (k == "b_sequence") {
    m.b = r.get<std::vector<double>>("b");
    m.e = vec("e");
    m.tail_rate = r.get<double>("tail_rate", 0.0);
  } else if (k == "observation_driven") {
    ObservationDrivenBinarySpec s;
    s.alpha = vec("alpha");
    s.beta = vec("beta");
    s.gamma = vec("gamma");
    s.intercept = r.get<double>("intercept", 0.0);
    s.link = detail::link_from_name(r.get<std::string>("link", "logistic"));
    m.spec = s;
  } else if (k == "binary_infinite_order") {
    BinaryInfiniteOrderSpec s;
    s.a = vec("a");
    s.gamma = vec("gamma");
    s.intercept = r.get<double>("intercept", 0.0);
    s.link = detail::link_from_name(r.get<std::string>("link", "logistic"));
    m.spec = s;
  } else if (k == "nonlinear") {
    auto s = NonlinearBinarySpec::russell(r.get<double>("g_beta"), r.get<double>("g_alpha"), r.get<double>("alpha"),
                                          vec("gamma"),
                                          detail::link_from_name(r.get<std::string>("link", "logistic")));
    s.intercept = r.get<double>("intercept", 0.0);
    m.spec = s;
  } else if (k == "multinomial" || k == "discrete_choice") {
    const int n = r.get<int>(k == "multinomial" ? "categories" : "components");
    const Eigen::Index rows = k == "multinomial" ? n - 1 : n;
    if (rows < 1) throw ConfigError("model: too few categories");
    auto A = r.has("A") ? detail::matrices_from_json(r.raw("A"), "model.A") : std::vector<Eigen::MatrixXd>{};
    auto B = r.has("B") ? detail::matrices_from_json(r.raw("B"), "model.B") : std::vector<Eigen::MatrixXd>{};
    Eigen::MatrixXd G = r.has("Gamma") ? detail::matrix_from_json(r.raw("Gamma"), "model.Gamma")
                                       : Eigen::MatrixXd(rows, 0);
    Eigen::VectorXd c = r.has("intercept") ? detail::vector_from_json(r.raw("intercept"), "model.intercept")
                                           : Eigen::VectorXd::Zero(rows);
    if (G.rows() != rows && !(G.rows() == 0 && G.cols() == 0)) throw ConfigError("model.Gamma has the wrong row count");
    if (G.rows() == 0) G.resize(rows, 0);
    if (c.size() != rows) throw ConfigError("model.intercept has the wrong length");
    for (const auto* list : {&A, &B})
      for (const auto& M : *list)
        if (M.rows() != rows) throw ConfigError("model: A and B matrices need " + std::to_string(rows) + " rows");
    if (k == "multinomial") {
      m.spec = MultinomialSpec{n, std::move(A), std::move(B), std::move(G), std::move(c)};
    } else {
      DiscreteChoiceSpec s{n, std::move(A), std::move(B), std::move(G), std::move(c)};
      s.noise = detail::link_from_name(r.get<std::string>("noise", "probit"));
      m.spec = s;
    }
  } else {
    throw ConfigError("unknown model kind '" + k + "'");
  }
  m.truncation_lag = r.count("truncation_lag", 60);
  r.finish();
  return m;
}

inline Json model_to_json(const ModelConfig& m) {
  Json j;
  j["kind"] = m.kind;
  if (m.kind == "markov") {
    j["P"] = m.P;
  } else if (m.kind == "table") {
    j["categories"] = m.categories;
    j["memory"] = m.memory;
    j["table"] = m.table;
  } else if (m.kind == "b_sequence") {
    j["b"] = m.b;
    j["e"] = m.e;
    j["tail_rate"] = m.tail_rate;
  } else if (m.spec) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ObservationDrivenBinarySpec>) {
            j["alpha"] = s.alpha;
            j["beta"] = s.beta;
            j["gamma"] = s.gamma;
            j["intercept"] = s.intercept;
            j["link"] = s.link.name();
          } else if constexpr (std::is_same_v<T, BinaryInfiniteOrderSpec>) {
            j["a"] = s.a;
            j["gamma"] = s.gamma;
            j["intercept"] = s.intercept;
            j["link"] = s.link.name();
          } else if constexpr (std::is_same_v<T, NonlinearBinarySpec>) {
            j["g_beta"] = s.g_beta;
            j["g_alpha"] = s.g_alpha;
            j["alpha"] = s.alpha;
            j["gamma"] = s.gamma;
            j["intercept"] = s.intercept;
            j["link"] = s.link.name();
          } else {
            if constexpr (std::is_same_v<T, MultinomialSpec>) j["categories"] = s.categories;
            else j["components"] = s.components;
            j["A"] = detail::matrices_to_json(s.A);
            j["B"] = detail::matrices_to_json(s.B);
            j["Gamma"] = detail::matrix_to_json(s.Gamma);
            j["intercept"] = detail::vector_to_json(s.intercept);
            if constexpr (std::is_same_v<T, DiscreteChoiceSpec>) j["noise"] = s.noise.name();
          }
        },
        *m.spec);
  }
  j["truncation_lag"] = m.truncation_lag;
  return j;
}

// ---------------------------------------------------------------------------
// Covariate block.

inline CovariateModel covariates_from_json(const Json& j) {
  detail::ObjectReader r(j, "covariates");
  const auto kind = r.get<std::string>("kind");
  CovariateModel m;
  if (kind == "none") {
    m = CovariateModel::none();
  } else if (kind == "constant") {
    m = CovariateModel::constant(r.count("dim", 1), r.get<double>("value"));
  } else if (kind == "gaussian") {
    m = CovariateModel::gaussian(r.count("dim", 1), r.get<double>("mean", 0.0), r.get<double>("sd", 1.0));
  } else if (kind == "uniform") {
    m = CovariateModel::uniform(r.count("dim", 1), r.get<double>("lo"), r.get<double>("hi"));
  } else if (kind == "ar1") {
    m = CovariateModel::ar1(r.count("dim", 1), r.get<double>("rho"), r.get<double>("sd", 1.0));
  } else if (kind == "markov") {
    m = CovariateModel::markov(r.get<std::vector<std::vector<double>>>("P"),
                               r.get<std::vector<std::vector<double>>>("emissions"));
  } else {
    throw ConfigError("unknown covariate kind '" + kind + "'");
  }
  r.finish();
  try {
    m.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("covariates: ") + e.what());
  }
  return m;
}

inline Json covariates_to_json(const CovariateModel& m) {
  Json j;
  switch (m.kind) {
    case CovariateKind::Iid:
      if (m.dim == 0) {
        j["kind"] = "none";
      } else if (m.dist == IidDist::Constant) {
        j["kind"] = "constant";
        j["dim"] = m.dim;
        j["value"] = m.a;
      } else if (m.dist == IidDist::Gaussian) {
        j["kind"] = "gaussian";
        j["dim"] = m.dim;
        j["mean"] = m.a;
        j["sd"] = m.b;
      } else {
        j["kind"] = "uniform";
        j["dim"] = m.dim;
        j["lo"] = m.a;
        j["hi"] = m.b;
      }
      break;
    case CovariateKind::AR1:
      j["kind"] = "ar1";
      j["dim"] = m.dim;
      j["rho"] = m.rho;
      j["sd"] = m.b;
      break;
    case CovariateKind::FiniteMarkov:
      j["kind"] = "markov";
      j["P"] = m.P;
      j["emissions"] = m.emissions;
      break;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Whole configuration.

inline RunConfig config_from_json(const Json& j) {
  detail::ObjectReader r(j, "config");
  RunConfig c;
  c.model = model_from_json(r.raw("model"));
  c.covariates = r.has("covariates") ? covariates_from_json(r.raw("covariates")) : CovariateModel::none();
  if (r.has("seed")) {
    const Json& s = r.raw("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      throw ConfigError("seed must be a nonnegative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  c.output = r.get<std::string>("output", "out");

  if (r.has("simulate")) {
    detail::ObjectReader s(r.raw("simulate"), "simulate");
    c.simulate.length = s.count("length", c.simulate.length);
    c.simulate.eps = s.get<double>("eps", c.simulate.eps);
    s.finish();
  }
  if (r.has("bounds")) {
    detail::ObjectReader s(r.raw("bounds"), "bounds");
    c.bounds.horizon = s.count("horizon", c.bounds.horizon);
    c.bounds.n_max = s.count("n_max", c.bounds.n_max);
    if (s.has("metric")) {
      const auto m = s.get<std::string>("metric");
      if (m == "l1") c.bounds.metric = CouplingMetric::L1;
      else if (m == "discrete") c.bounds.metric = CouplingMetric::Discrete;
      else throw ConfigError("bounds.metric must be \"l1\" or \"discrete\"");
    }
    if (s.has("p")) c.bounds.p = detail::moment_from_json(s.raw("p"));
    s.finish();
  }
  if (r.has("verify")) {
    detail::ObjectReader s(r.raw("verify"), "verify");
    c.verify.replicas = s.count("replicas", c.verify.replicas);
    c.verify.length = s.count("length", c.verify.length);
    c.verify.beta_n = s.count("beta_n", c.verify.beta_n);
    c.verify.sigmas = s.get<double>("sigmas", c.verify.sigmas);
    s.finish();
  }
  if (r.has("fit")) {
    detail::ObjectReader s(r.raw("fit"), "fit");
    auto& f = c.fit;
    f.data = s.get<std::string>("data", "");
    f.self_test_length = s.count("self_test_length", f.self_test_length);
    f.self_test_eps = s.get<double>("self_test_eps", f.self_test_eps);
    f.tolerance = s.get<double>("tolerance", f.tolerance);
    f.p = s.count("p", f.p);
    f.q = s.count("q", f.q);
    f.fit_intercept = s.get<bool>("fit_intercept", f.fit_intercept);
    f.link = s.get<std::string>("link", f.link);
    detail::link_from_name(f.link);
    f.semiparametric = s.get<bool>("semiparametric", f.semiparametric);
    f.bandwidth = s.get<double>("bandwidth", f.bandwidth);
    s.finish();
  }
  r.finish();

  if (!(c.simulate.eps > 0.0)) throw ConfigError("simulate.eps must be > 0");
  if (c.simulate.length == 0) throw ConfigError("simulate.length must be >= 1");
  if (c.bounds.n_max == 0 || c.bounds.horizon < c.bounds.n_max) {
    throw ConfigError("bounds: need 1 <= n_max <= horizon");
  }
  if (c.verify.replicas == 0 || c.verify.length == 0) throw ConfigError("verify: replicas and length must be >= 1");
  if (!(c.verify.sigmas > 0.0)) throw ConfigError("verify.sigmas must be > 0");
  if (c.fit.bandwidth < 0.0) throw ConfigError("fit.bandwidth must be >= 0");
  if (c.model.has_kernel() && c.model.cov_dim() != c.covariates.dim) {
    throw ConfigError("model expects " + std::to_string(c.model.cov_dim()) + " covariate(s), covariate block has " +
                      std::to_string(c.covariates.dim));
  }
  return c;
}

inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["model"] = model_to_json(c.model);
  j["covariates"] = covariates_to_json(c.covariates);
  j["seed"] = c.seed;
  j["output"] = c.output;
  j["simulate"] = {{"length", c.simulate.length}, {"eps", c.simulate.eps}};
  Json b{{"horizon", c.bounds.horizon}, {"n_max", c.bounds.n_max}, {"metric", to_string(c.bounds.metric)}};
  if (std::isinf(c.bounds.p)) b["p"] = "inf";
  else b["p"] = c.bounds.p;
  j["bounds"] = b;
  j["verify"] = {{"replicas", c.verify.replicas},
                 {"length", c.verify.length},
                 {"beta_n", c.verify.beta_n},
                 {"sigmas", c.verify.sigmas}};
  j["fit"] = {{"data", c.fit.data},
              {"self_test_length", c.fit.self_test_length},
              {"self_test_eps", c.fit.self_test_eps},
              {"tolerance", c.fit.tolerance},
              {"p", c.fit.p},
              {"q", c.fit.q},
              {"fit_intercept", c.fit.fit_intercept},
              {"link", c.fit.link},
              {"semiparametric", c.fit.semiparametric},
              {"bandwidth", c.fit.bandwidth}};
  return j;
}

inline RunConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

inline std::string emit_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

}  // namespace catchain
