#include "dyfn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "dyfn/error.hpp"
#include "dyfn/gradcheck.hpp"
#include "dyfn/io.hpp"
#include "dyfn/rng.hpp"

namespace dyfn {

void validate_train_config(const TrainConfig& c) {
  require(c.clip_length >= 2, ErrorKind::InvalidInput, "clip_length must be >= 2");
  require(c.stride_min >= 1 && c.stride_max <= 5 && c.stride_min <= c.stride_max, ErrorKind::InvalidInput,
          "stride range must lie within [1, 5]");
  require(c.batch >= 1, ErrorKind::InvalidInput, "batch must be >= 1");
  require(c.adam.lr > 0.0 && c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0 && c.adam.beta2 >= 0.0 &&
              c.adam.beta2 < 1.0 && c.adam.eps > 0.0,
          ErrorKind::InvalidInput, "bad Adam hyperparameters");
  validate_weights(c.weights);
  validate_config(c.dyfn);
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"clip_length", c.clip_length},
          {"stride", {c.stride_min, c.stride_max}},
          {"steps", c.steps},
          {"batch", c.batch},
          {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"weights", to_json(c.weights)},
          {"strategy", to_string(c.strategy)},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"dyfn", to_json(c.dyfn)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.clip_length = j.value("clip_length", c.clip_length);
    if (j.contains("stride")) {
      c.stride_min = j.at("stride").at(0).get<int>();
      c.stride_max = j.at("stride").at(1).get<int>();
    }
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      c.adam = {a.value("lr", c.adam.lr), a.value("beta1", c.adam.beta1), a.value("beta2", c.adam.beta2),
                a.value("eps", c.adam.eps)};
    }
    if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"));
    c.strategy = parse_strategy(j.value("strategy", std::string("first_frame")));
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("dyfn")) c.dyfn = dyfn_config_from_json(j.at("dyfn"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("bad train config: ") + e.what());
  }
  validate_train_config(c);
  return c;
}

std::vector<std::pair<std::size_t, int>> admissible_clips(std::size_t length, const TrainConfig& cfg) {
  std::vector<std::pair<std::size_t, int>> out;
  for (int s = cfg.stride_min; s <= cfg.stride_max; ++s) {
    const std::size_t span = (cfg.clip_length - 1) * static_cast<std::size_t>(s) + 1;
    if (span > length) continue;
    for (std::size_t start = 0; start + span <= length; ++start) out.emplace_back(start, s);
  }
  return out;
}

ClipIndices sample_clip(std::size_t length, const TrainConfig& cfg, std::uint64_t step_seed) {
  const auto pairs = admissible_clips(length, cfg);
  require(!pairs.empty(), ErrorKind::InsufficientData,
          "sequence of " + std::to_string(length) + " frames is too short for clips of " +
              std::to_string(cfg.clip_length));
  Rng rng(step_seed);
  const auto [start, stride] = pairs[rng.index(pairs.size())];
  ClipIndices c;
  c.start = start;
  c.stride = stride;
  for (std::size_t k = 0; k < cfg.clip_length; ++k) c.frames.push_back(start + k * static_cast<std::size_t>(stride));
  return c;
}

nlohmann::json to_json(const TrainLogEntry& e) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : e.clips)
    clips.push_back({{"sequence", c.sequence}, {"start", c.start}, {"stride", c.stride}});
  return {{"step", e.step},
          {"loss", to_json(e.report)},
          {"grad_norm", e.grad_norm},
          {"wall_ms", e.wall_ms},
          {"clips", clips}};
}

nlohmann::json to_json(const GradCheckReport& r) {
  return {{"rel_error", r.rel_error},
          {"grad_norm", r.grad_norm},
          {"max_rel_error", r.max_rel_error},
          {"passed", r.passed},
          {"tolerance", r.tolerance}};
}

ClipGraph clip_loss(Tape& tape, const DyfnParams& params, const Simulation& sim,
                    const std::vector<std::size_t>& frames, const LossWeights& weights,
                    AlignStrategy strategy, std::uint64_t seed, AlignmentMemo* memo) {
  require(!frames.empty(), ErrorKind::InvalidInput, "empty clip");
  ClipGraph g;
  g.params = bind_params(tape, params, true);
  const Tensor& f0 = *sim.sequence.frames.at(frames[0]).feature;
  Var hidden = tape.constant(initial_state(params.config, f0.dim(1), f0.dim(2)).hidden);
  std::vector<LossFrame> clip;
  for (std::size_t j : frames) {
    const auto& fr = sim.sequence.frames.at(j);
    require(fr.feature.has_value(), ErrorKind::InvalidInput, "training frames need encoder features");
    StepVars s = step(params.config, g.params, tape.constant(*fr.feature), hidden);
    hidden = s.hidden;
    clip.push_back({sim.decoder.decode(s.f_consistent, j), tape.constant(sim.decoder.mask(j)), &fr.gt});
  }
  g.loss = loss_total(clip, weights, strategy, seed, memo);
  return g;
}

namespace {

struct Adam {
  std::map<std::string, Tensor> m, v;
  std::size_t t = 0;

  void update(DyfnParams& p, const std::map<std::string, Tensor>& grads, const AdamConfig& c) {
    ++t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (auto& [name, w] : p.tensors) {
      const Tensor& g = grads.at(name);
      auto [mi, _] = m.try_emplace(name, w.shape());
      auto [vi, __] = v.try_emplace(name, w.shape());
      for (std::size_t i = 0; i < w.size(); ++i) {
        mi->second[i] = c.beta1 * mi->second[i] + (1.0 - c.beta1) * g[i];
        vi->second[i] = c.beta2 * vi->second[i] + (1.0 - c.beta2) * g[i] * g[i];
        w[i] -= c.lr * (mi->second[i] / bc1) / (std::sqrt(vi->second[i] / bc2) + c.eps);
      }
    }
  }
};

struct ClipOutcome {
  std::map<std::string, Tensor> grads;
  LossReport report;
  std::string error;
};

std::string step_dir(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu", step);
  return buf;
}

void dump_clip(const std::optional<std::filesystem::path>& out, const DyfnParams& params, std::size_t step,
               const ClipIndices& clip, const std::string& what) {
  if (!out) return;
  const auto dir = *out / "nonfinite_dump";
  save_params(dir / "params", params);
  io::write_json(dir / "clip.json", {{"step", step},
                                     {"sequence", clip.sequence},
                                     {"frames", clip.frames},
                                     {"stride", clip.stride},
                                     {"error", what}});
}

}  // namespace

TrainResult train(std::span<const Simulation> data, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out, std::optional<DyfnParams> initial) {
  validate_train_config(cfg);
  require(!data.empty(), ErrorKind::InvalidInput, "empty training set");
  TrainResult result;
  result.params = initial ? std::move(*initial) : init_params(cfg.dyfn, derive_seed(cfg.seed, "dyfn"));

  std::vector<std::size_t> usable;
  std::vector<std::string> checksums;
  for (std::size_t k = 0; k < data.size(); ++k) {
    checksums.push_back(data[k].decoder.checksum());
    require(data[k].sequence.frames.empty() ||
                data[k].sequence.frames[0].feature->dim(0) == result.params.config.channels,
            ErrorKind::InvalidInput, "feature channels do not match the DyFN config");
    if (admissible_clips(data[k].sequence.length(), cfg).empty())
      result.warnings.push_back("sequence " + std::to_string(k) + " skipped: too short for the clip length");
    else
      usable.push_back(k);
  }
  require(!usable.empty(), ErrorKind::InsufficientData, "no training sequence is long enough for the clip length");
  std::string joined;
  for (const auto& c : checksums) joined += c;
  result.decoder_checksum = io::fnv1a_hex(joined);

  std::string log_text;
  auto verify_frozen = [&] {
    for (std::size_t k = 0; k < data.size(); ++k)
      require(data[k].decoder.checksum() == checksums[k], ErrorKind::Validation,
              "decoder constants changed during training");
  };
  auto checkpoint = [&](const std::string& name) {
    if (!out) return;
    verify_frozen();
    save_params(*out / "checkpoints" / name, result.params);
  };

  Adam adam;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ClipIndices> clips;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const std::uint64_t s = derive_seed(cfg.seed, "clip", step * cfg.batch + b);
      Rng pick(derive_seed(s, "sequence"));
      const std::size_t seq = usable[pick.index(usable.size())];
      ClipIndices c = sample_clip(data[seq].sequence.length(), cfg, s);
      c.sequence = seq;
      clips.push_back(std::move(c));
    }

    std::vector<ClipOutcome> outcomes(clips.size());
#pragma omp parallel for schedule(static) if (clips.size() > 1)
    for (std::size_t b = 0; b < clips.size(); ++b) {
      try {
        Tape tape;
        ClipGraph g = clip_loss(tape, result.params, data[clips[b].sequence], clips[b].frames, cfg.weights,
                                cfg.strategy, derive_seed(cfg.seed, "loss", step * cfg.batch + b));
        tape.backward(g.loss.total);
        for (const auto& [name, v] : g.params) outcomes[b].grads.emplace(name, tape.grad(v));
        outcomes[b].report = g.loss.report;
      } catch (const std::exception& e) {
        outcomes[b].error = e.what();
      }
    }

    TrainLogEntry entry;
    entry.step = step;
    entry.clips = clips;
    std::map<std::string, Tensor> grads;
    for (const auto& [name, t] : result.params.tensors) grads.emplace(name, Tensor(t.shape()));
    const double inv = 1.0 / static_cast<double>(clips.size());
    for (std::size_t b = 0; b < clips.size(); ++b) {
      if (!outcomes[b].error.empty()) {
        dump_clip(out, result.params, step, clips[b], outcomes[b].error);
        fail(ErrorKind::Numeric, "step " + std::to_string(step) + ": " + outcomes[b].error);
      }
      const LossReport& r = outcomes[b].report;
      entry.report.total += inv * r.total;
      for (const auto& [k, v] : r.components) entry.report.components[k] += inv * v;
      if (b == 0) entry.report.alignment_used = r.alignment_used;
      entry.report.temp_empty_window = entry.report.temp_empty_window || r.temp_empty_window;
      for (auto& [name, g] : grads) {
        const Tensor& src = outcomes[b].grads.at(name);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * src[i];
      }
    }
    double sq = 0.0;
    for (const auto& [_, g] : grads)
      for (double v : g.data()) sq += v * v;
    entry.grad_norm = std::sqrt(sq);
    if (!std::isfinite(entry.report.total) || !std::isfinite(entry.grad_norm)) {
      dump_clip(out, result.params, step, clips[0], "non-finite loss or gradient");
      fail(ErrorKind::Numeric, "non-finite loss or gradient at step " + std::to_string(step));
    }
    adam.update(result.params, grads, cfg.adam);
    entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (out) log_text += to_json(entry).dump() + "\n";
    result.log.push_back(std::move(entry));
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) checkpoint(step_dir(step + 1));
  }

  verify_frozen();
  if (out) {
    std::filesystem::create_directories(*out);
    io::write_atomic(*out / "train_log.jsonl", log_text);
    save_params(*out / "final", result.params);
  }
  return result;
}

GradCheckReport grad_check(const DyfnConfig& config, std::uint64_t seed, bool mask_all_invalid) {
  SceneSpec scene;
  scene.height = 8;
  scene.width = 8;
  scene.frames = 3;
  // Fast camera and strong geometry error keep the L1 and angle terms away
  // from their kinks.
  scene.path.translation = Eigen::Vector3d(0.15, 0.05, 0.1);
  scene.path.yaw_rate = 0.05;
  DriftSpec drift;
  drift.channels = config.channels;
  drift.geometry_noise = 0.2;
  drift.smoothing = 1.0;
  Simulation sim = simulate(scene, drift, seed);
  if (mask_all_invalid)
    for (auto& f : sim.sequence.frames) f.gt.valid_mask = Tensor(f.gt.valid_mask.shape());

  const DyfnParams params = init_params(config, seed);
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [n, t] : params.tensors) {
    names.push_back(n);
    inputs.push_back(t);
  }
  const std::vector<std::size_t> frames = {0, 1, 2};
  const LossWeights weights;
  AlignmentMemo memo;
  auto fn = [&](Tape& tape, const std::vector<Var>& leaves) {
    if (memo.replay) memo.rewind();
    // Rebind through the given leaves so gradients reach them.
    ParamVars pv;
    for (std::size_t i = 0; i < names.size(); ++i) pv.emplace(names[i], leaves[i]);
    const Tensor& f0 = *sim.sequence.frames[0].feature;
    Var hidden = tape.constant(initial_state(config, f0.dim(1), f0.dim(2)).hidden);
    std::vector<LossFrame> clip;
    for (std::size_t j : frames) {
      const auto& fr = sim.sequence.frames[j];
      StepVars s = step(config, pv, tape.constant(*fr.feature), hidden);
      hidden = s.hidden;
      clip.push_back({sim.decoder.decode(s.f_consistent, j), tape.constant(sim.decoder.mask(j)), &fr.gt});
    }
    Var v = loss_total(clip, weights, AlignStrategy::FirstFrame, seed, &memo).total;
    memo.replay = true;
    return v;
  };
  const GradCheckResult r = check_gradients(fn, inputs, 1e-6);
  GradCheckReport rep;
  for (std::size_t i = 0; i < names.size(); ++i) {
    rep.rel_error[names[i]] = r.rel_error[i];
    double sq = 0.0;
    for (double v : r.analytic[i].data()) sq += v * v;
    rep.grad_norm[names[i]] = std::sqrt(sq);
  }
  rep.max_rel_error = r.max_rel_error;
  rep.passed = r.max_rel_error < rep.tolerance;
  return rep;
}

Sequence stabilize_stream(const Simulation& sim, const DyfnParams& params) {
  std::vector<Tensor> features;
  for (const auto& f : sim.sequence.frames) {
    require(f.feature.has_value(), ErrorKind::InvalidInput, "pipeline needs encoder features");
    features.push_back(*f.feature);
  }
  const auto outputs = run_stream(params, features);
  Sequence out = sim.sequence;
  for (std::size_t j = 0; j < out.frames.size(); ++j) {
    out.frames[j].pred = sim.decoder.decode(outputs[j].f_consistent, j);
    out.frames[j].feature.reset();
  }
  return out;
}

}  // namespace dyfn
