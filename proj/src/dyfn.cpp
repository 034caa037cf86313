#include "dyfn/dyfn.hpp"

#include <cmath>

#include "dyfn/error.hpp"
#include "dyfn/io.hpp"
#include "dyfn/modulation.hpp"
#include "dyfn/ntf.hpp"
#include "dyfn/rng.hpp"

namespace dyfn {

std::string_view to_string(CellKind k) noexcept { return k == CellKind::Gru ? "gru" : "convgru"; }

CellKind parse_cell_kind(std::string_view s) {
  if (s == "convgru") return CellKind::ConvGru;
  if (s == "gru") return CellKind::Gru;
  fail(ErrorKind::InvalidInput, "unknown cell kind '" + std::string(s) + "'");
}

std::string_view to_string(InitMode m) noexcept {
  switch (m) {
    case InitMode::Standard: return "standard";
    case InitMode::Random: return "random";
    case InitMode::Zero: return "zero";
  }
  return "standard";
}

InitMode parse_init_mode(std::string_view s) {
  if (s == "standard") return InitMode::Standard;
  if (s == "random") return InitMode::Random;
  if (s == "zero") return InitMode::Zero;
  fail(ErrorKind::InvalidInput, "unknown init mode '" + std::string(s) + "'");
}

nlohmann::json to_json(const DyfnConfig& c) {
  return {{"channels", c.channels},     {"hidden", c.hidden},
          {"kernel", c.kernel},         {"cell", to_string(c.cell)},
          {"normalized_input", c.normalized_input},
          {"init", to_string(c.init)},  {"backbone_size", c.backbone_size},
          {"budget_ratio", c.budget_ratio}, {"epsilon", c.epsilon}};
}

DyfnConfig dyfn_config_from_json(const nlohmann::json& j) {
  DyfnConfig c;
  try {
    c.channels = j.value("channels", c.channels);
    c.hidden = j.value("hidden", c.hidden);
    c.kernel = j.value("kernel", c.kernel);
    c.cell = parse_cell_kind(j.value("cell", std::string("convgru")));
    c.normalized_input = j.value("normalized_input", c.normalized_input);
    c.init = parse_init_mode(j.value("init", std::string("standard")));
    c.backbone_size = j.value("backbone_size", c.backbone_size);
    c.budget_ratio = j.value("budget_ratio", c.budget_ratio);
    c.epsilon = j.value("epsilon", c.epsilon);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("bad dyfn config: ") + e.what());
  }
  return c;
}

namespace {

struct Slot {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

const char* const kGates[] = {"gate_z", "gate_r", "cand"};
const char* const kHeads[] = {"head_sigma", "head_mu"};

std::vector<Slot> layout(const DyfnConfig& c) {
  std::vector<Slot> s;
  const std::size_t in = c.channels + c.hidden;
  for (const char* g : kGates) {
    if (c.cell == CellKind::ConvGru)
      s.push_back({std::string(g) + ".w", {c.hidden, in, c.kernel, c.kernel}, in * c.kernel * c.kernel});
    else
      s.push_back({std::string(g) + ".w", {c.hidden, in}, in});
    s.push_back({std::string(g) + ".b", {c.hidden}, in});
  }
  for (const char* h : kHeads) {
    if (c.cell == CellKind::ConvGru)
      s.push_back({std::string(h) + ".w", {c.channels, c.hidden, 1, 1}, c.hidden});
    else
      s.push_back({std::string(h) + ".w", {c.channels, c.hidden}, c.hidden});
    s.push_back({std::string(h) + ".b", {c.channels}, c.hidden});
  }
  return s;
}

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

}  // namespace

std::size_t parameter_count(const DyfnConfig& c) {
  std::size_t n = 0;
  for (const auto& s : layout(c)) n += shape_size(s.shape);
  return n;
}

std::size_t DyfnParams::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

bool DyfnParams::all_finite() const {
  for (const auto& [_, t] : tensors)
    if (!t.all_finite()) return false;
  return true;
}

void validate_config(const DyfnConfig& c) {
  require(c.channels >= 1, ErrorKind::InvalidInput, "channels must be >= 1");
  require(c.hidden >= 1, ErrorKind::InvalidInput, "hidden_channels must be >= 1");
  require(c.kernel % 2 == 1, ErrorKind::InvalidInput, "kernel_size must be odd");
  require(c.epsilon > 0.0, ErrorKind::InvalidInput, "epsilon must be positive");
  const double budget = c.budget_ratio * c.backbone_size;
  const std::size_t n = parameter_count(c);
  require(static_cast<double>(n) <= budget, ErrorKind::InvalidInput,
          "DyFN has " + std::to_string(n) + " parameters, budget is " + std::to_string(budget));
}

DyfnParams init_params(const DyfnConfig& config, std::uint64_t seed) {
  validate_config(config);
  DyfnParams p{config, seed, {}};
  Rng rng(derive_seed(seed, "dyfn-init"));
  for (const auto& slot : layout(config)) {
    Tensor t(slot.shape);
    const double bound = std::sqrt(1.0 / static_cast<double>(slot.fan_in));
    const bool head = slot.name.rfind("head", 0) == 0;
    const bool bias = slot.name.back() == 'b';
    // Draw for every slot so the stream of numbers is independent of the mode.
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    switch (config.init) {
      case InitMode::Zero:
        t = Tensor(slot.shape);
        break;
      case InitMode::Standard:
        if (head || bias) t = Tensor(slot.shape);
        if (slot.name == "gate_z.b") t = Tensor(slot.shape, -1.0);
        if (slot.name == "head_sigma.b") t = Tensor(slot.shape, softplus_inverse(1.0));
        break;
      case InitMode::Random:
        if (slot.name == "head_sigma.b")
          for (double& v : t.data()) v += softplus_inverse(1.0);
        break;
    }
    p.tensors.emplace(slot.name, std::move(t));
  }
  return p;
}

DyfnState initial_state(const DyfnConfig& c, std::size_t height, std::size_t width) {
  if (c.cell == CellKind::Gru) return {Tensor(Shape{c.hidden}), 0};
  return {Tensor(Shape{c.hidden, height, width}), 0};
}

ParamVars bind_params(Tape& tape, const DyfnParams& params, bool trainable) {
  ParamVars v;
  for (const auto& [name, t] : params.tensors)
    v.emplace(name, trainable ? tape.leaf(t) : tape.constant(t));
  return v;
}

namespace {

Var conv_bias(Var x, const ParamVars& p, const std::string& name) {
  return ops::channel_broadcast(BinaryOp::Add, ops::conv2d(x, p.at(name + ".w")), p.at(name + ".b"));
}

Var fc_bias(Var x, const ParamVars& p, const std::string& name) {
  return ops::add(ops::linear(p.at(name + ".w"), x), p.at(name + ".b"));
}

// h_t = (1 - z) * h + z * cand
Var blend(Var z, Var h, Var cand) {
  return ops::add(ops::mul(ops::affine(z, -1.0, 1.0), h), ops::mul(z, cand));
}

}  // namespace

StepVars step(const DyfnConfig& c, const ParamVars& p, Var feature, Var hidden) {
  const Shape& fs = feature.shape();
  require(fs.size() == 3 && fs[0] == c.channels, ErrorKind::ShapeMismatch,
          "feature " + shape_string(fs) + " does not match " + std::to_string(c.channels) + " channels");
  const std::size_t h = fs[1], w = fs[2];
  const Shape want = c.cell == CellKind::Gru ? Shape{c.hidden} : Shape{c.hidden, h, w};
  require(hidden.shape() == want, ErrorKind::ShapeMismatch,
          "state " + shape_string(hidden.shape()) + " does not match feature " + shape_string(fs));

  NormalizedVar n = normalize(feature, c.epsilon);
  Var in = c.normalized_input ? n.f_norm : feature;

  Var h_new, sigma_raw, mu;
  if (c.cell == CellKind::ConvGru) {
    Var x = ops::concat(in, hidden);
    Var z = ops::sigmoid(conv_bias(x, p, "gate_z"));
    Var r = ops::sigmoid(conv_bias(x, p, "gate_r"));
    Var cand = ops::tanh(conv_bias(ops::concat(in, ops::mul(r, hidden)), p, "cand"));
    h_new = blend(z, hidden, cand);
    sigma_raw = conv_bias(h_new, p, "head_sigma");
    mu = conv_bias(h_new, p, "head_mu");
  } else {
    Var pooled = ops::channel_stats(in).first;
    Var x = ops::concat(pooled, hidden);
    Var z = ops::sigmoid(fc_bias(x, p, "gate_z"));
    Var r = ops::sigmoid(fc_bias(x, p, "gate_r"));
    Var cand = ops::tanh(fc_bias(ops::concat(pooled, ops::mul(r, hidden)), p, "cand"));
    h_new = blend(z, hidden, cand);
    sigma_raw = ops::broadcast_spatial(fc_bias(h_new, p, "head_sigma"), h, w);
    mu = ops::broadcast_spatial(fc_bias(h_new, p, "head_mu"), h, w);
  }
  Var sigma = ops::affine(ops::softplus(sigma_raw), 1.0, kSigmaFloor);
  Var out = ops::add(ops::mul(sigma, n.f_norm), mu);
  return {out, mu, sigma, h_new};
}

namespace {

DyfnOutput run_step(const DyfnParams& params, const Tensor& feature, const DyfnState& state) {
  Tape tape;
  const ParamVars p = bind_params(tape, params, false);
  const StepVars s = step(params.config, p, tape.constant(feature), tape.constant(state.hidden));
  for (double v : s.hidden.value().data())
    // tanh rounds to exactly +-1 once saturated, so the closed interval is the
    // representable bound.
    require(std::isfinite(v) && std::abs(v) <= 1.0, ErrorKind::Numeric, "hidden state left [-1, 1]");
  return {s.f_consistent.value(), s.mu_hat.value(), s.sigma_hat.value(),
          {s.hidden.value(), state.step + 1}};
}

}  // namespace

DyfnOutput step(const DyfnParams& params, const Tensor& feature, const DyfnState& state) {
  return run_step(params, feature, state);
}

DyfnOutput step_convgru(const DyfnParams& params, const Tensor& feature, const DyfnState& state) {
  require(params.config.cell == CellKind::ConvGru, ErrorKind::InvalidInput,
          "step_convgru needs convgru parameters");
  return run_step(params, feature, state);
}

DyfnOutput step_gru(const DyfnParams& params, const Tensor& feature, const DyfnState& state) {
  require(params.config.cell == CellKind::Gru, ErrorKind::InvalidInput, "step_gru needs gru parameters");
  return run_step(params, feature, state);
}

std::vector<DyfnOutput> run_stream(const DyfnParams& params, const std::vector<Tensor>& features) {
  require(!features.empty(), ErrorKind::InvalidInput, "empty feature stream");
  const Shape& s0 = features.front().shape();
  require(s0.size() == 3, ErrorKind::ShapeMismatch, "features must be C x H x W");
  DyfnState state = initial_state(params.config, s0[1], s0[2]);
  std::vector<DyfnOutput> out;
  out.reserve(features.size());
  for (const Tensor& f : features) {
    require(f.shape() == s0, ErrorKind::ShapeMismatch,
            "inconsistent feature shape " + shape_string(f.shape()) + " vs " + shape_string(s0));
    out.push_back(step(params, f, state));
    state = out.back().state;
  }
  return out;
}

void save_params(const std::filesystem::path& dir, const DyfnParams& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : params.tensors) {
    ntf::write_tensor(dir / (name + ".ntf"), name, t);
    names.push_back(name);
  }
  io::write_json(dir / "params.json", {{"config", to_json(params.config)},
                                       {"seed", params.seed},
                                       {"parameter_count", params.count()},
                                       {"tensors", names}});
}

DyfnParams load_params(const std::filesystem::path& dir) {
  const nlohmann::json j = io::read_json(dir / "params.json");
  DyfnParams p;
  try {
    p.config = dyfn_config_from_json(j.at("config"));
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, std::string("bad params.json: ") + e.what());
  }
  validate_config(p.config);
  for (const auto& slot : layout(p.config)) {
    ntf::NamedTensor t = ntf::read_named(dir / (slot.name + ".ntf"));
    require(t.tensor.shape() == slot.shape, ErrorKind::ShapeMismatch,
            "checkpoint tensor " + slot.name + " has shape " + shape_string(t.tensor.shape()) +
                ", config expects " + shape_string(slot.shape));
    p.tensors.emplace(slot.name, std::move(t.tensor));
  }
  require(p.all_finite(), ErrorKind::Numeric, "checkpoint holds non-finite parameters");
  return p;
}

}  // namespace dyfn
