#pragma once

// Dynamic feature normalization: a recurrent cell over the encoder features
// predicts per-position statistics (sigma_hat, mu_hat) that replace the
// frame's own channel statistics.
//
//   f_norm       = (F_t - mu(F_t)) / (sigma(F_t) + eps)
//   h_t          = Cell(F_t, h_{t-1})
//   F_consistent = sigma_hat(h_t) * f_norm + mu_hat(h_t)

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/autodiff.hpp"
#include "dyfn/tensor.hpp"

namespace dyfn {

enum class CellKind { ConvGru, Gru };
std::string_view to_string(CellKind k) noexcept;
CellKind parse_cell_kind(std::string_view s);

enum class InitMode {
  Standard,  // uniform gates, update bias -1, zero heads, sigma_hat ~ 1
  Random,  // every tensor uniform, heads included
  Zero,
};
std::string_view to_string(InitMode m) noexcept;
InitMode parse_init_mode(std::string_view s);

inline constexpr double kSigmaFloor = 1e-4;
inline constexpr double kNominalBackbone = 250000.0;
inline constexpr double kBudgetRatio = 0.02;

struct DyfnConfig {
  std::size_t channels = 8;
  std::size_t hidden = 8;
  std::size_t kernel = 3;
  CellKind cell = CellKind::ConvGru;
  bool normalized_input = false;  // feed f_norm instead of F_t to the cell
  InitMode init = InitMode::Standard;
  double backbone_size = kNominalBackbone;
  double budget_ratio = kBudgetRatio;
  double epsilon = 1e-6;
};

nlohmann::json to_json(const DyfnConfig& c);
DyfnConfig dyfn_config_from_json(const nlohmann::json& j);

/// Trainable parameter count implied by a config.
std::size_t parameter_count(const DyfnConfig& c);

struct DyfnParams {
  DyfnConfig config;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor> tensors;

  std::size_t count() const;
  bool all_finite() const;
  const Tensor& at(const std::string& name) const { return tensors.at(name); }
  Tensor& at(const std::string& name) { return tensors.at(name); }
};

/// Rejects invalid configs and configs over the parameter budget.
void validate_config(const DyfnConfig& c);
DyfnParams init_params(const DyfnConfig& config, std::uint64_t seed);

struct DyfnState {
  Tensor hidden;  // C_h x H x W (convgru) or {C_h} (gru)
  std::size_t step = 0;
};
DyfnState initial_state(const DyfnConfig& c, std::size_t height, std::size_t width);

struct DyfnOutput {
  Tensor f_consistent;
  Tensor mu_hat;     // C x H x W
  Tensor sigma_hat;  // C x H x W
  DyfnState state;
};

// Differentiable form used by training and gradient checks.
using ParamVars = std::map<std::string, Var>;
ParamVars bind_params(Tape& tape, const DyfnParams& params, bool trainable = true);

struct StepVars {
  Var f_consistent;
  Var mu_hat;
  Var sigma_hat;
  Var hidden;
};
StepVars step(const DyfnConfig& config, const ParamVars& p, Var feature, Var hidden);

/// Dispatches on config.cell.
DyfnOutput step(const DyfnParams& params, const Tensor& feature, const DyfnState& state);
DyfnOutput step_convgru(const DyfnParams& params, const Tensor& feature, const DyfnState& state);
/// Fully connected cell over pooled features; needs a gru config.
DyfnOutput step_gru(const DyfnParams& params, const Tensor& feature, const DyfnState& state);
std::vector<DyfnOutput> run_stream(const DyfnParams& params, const std::vector<Tensor>& features);

/// Directory of NTF tensors plus params.json.
void save_params(const std::filesystem::path& dir, const DyfnParams& params);
DyfnParams load_params(const std::filesystem::path& dir);

}  // namespace dyfn
