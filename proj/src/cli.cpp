#include "dyfn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "dyfn/alignment.hpp"
#include "dyfn/dyfn.hpp"
#include "dyfn/io.hpp"
#include "dyfn/kernels.hpp"
#include "dyfn/modulation.hpp"
#include "dyfn/pose_recon.hpp"
#include "dyfn/rng.hpp"
#include "dyfn/simulator.hpp"
#include "dyfn/trainer.hpp"

namespace fs = std::filesystem;

namespace dyfn::cli {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInput:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::Validation:
      return kBadArgs;
    case ErrorKind::MalformedHeader:
    case ErrorKind::TruncatedPayload:
    case ErrorKind::SizeMismatch:
    case ErrorKind::MissingFile:
    case ErrorKind::Io:
      return kIo;
    case ErrorKind::DegenerateFit:
    case ErrorKind::InsufficientData:
    case ErrorKind::DegenerateGeometry:
    case ErrorKind::NoConsensus:
    case ErrorKind::Numeric:
      return kNumeric;
  }
  return kInternal;
}

nlohmann::json to_json(const RunManifest& m) {
  return {{"command", m.command},         {"config_hash", m.config_hash}, {"seed", m.seed},
          {"tool_version", m.tool_version}, {"inputs", m.inputs},         {"outputs", m.outputs},
          {"started_at", m.started_at},   {"finished_at", m.finished_at}};
}

RunManifest run_manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.inputs = j.at("inputs").get<std::vector<std::string>>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.at("finished_at").get<std::string>();
  return m;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Digest of what an input path holds. Directories are summarized by their
// manifest or parameter index, which reference every tensor they contain.
std::string input_digest(const fs::path& p) {
  if (fs::is_directory(p)) {
    for (const char* name : {"manifest.json", "params.json"})
      if (fs::exists(p / name)) {
        const auto bytes = io::read_bytes(p / name);
        return io::fnv1a_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
      }
    return "dir";
  }
  if (!fs::exists(p)) return "missing";
  const auto bytes = io::read_bytes(p);
  return io::fnv1a_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace

std::string config_hash(const nlohmann::json& config, const std::vector<fs::path>& inputs) {
  nlohmann::json j = {{"config", config}, {"inputs", nlohmann::json::array()}};
  for (const auto& p : inputs) j["inputs"].push_back(input_digest(p));
  return io::fnv1a_hex(j.dump());
}

void write_run_manifest(const fs::path& dir, RunManifest m) {
  m.outputs.clear();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == kRunManifestName || rel.find(".tmp") != std::string::npos) continue;
    m.outputs.push_back(rel);
  }
  std::sort(m.outputs.begin(), m.outputs.end());
  m.finished_at = utc_now();
  io::write_json(dir / kRunManifestName, to_json(m));
}

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
};

RunManifest begin(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                  const std::vector<fs::path>& inputs) {
  RunManifest m;
  m.command = command;
  m.seed = seed;
  m.config_hash = config_hash(config, inputs);
  for (const auto& p : inputs) m.inputs.push_back(p.generic_string());
  m.started_at = utc_now();
  return m;
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  // Stale outputs from an earlier run would leak into the manifest listing.
  fs::remove(dir / kRunManifestName, ec);
}

std::vector<std::size_t> parse_intervals(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t pos = 0;
    long long x = 0;
    try {
      x = std::stoll(tok, &pos);
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidInput, "bad interval '" + tok + "'");
    }
    require(pos == tok.size() && x > 0, ErrorKind::InvalidInput, "bad interval '" + tok + "'");
    v.push_back(static_cast<std::size_t>(x));
  }
  return v;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string spec;
  fs::path out;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& a, Context& ctx) {
  nlohmann::json spec = nlohmann::json::object();
  if (!a.spec.empty()) spec = io::read_json(a.spec);
  const SceneSpec scene = scene_from_json(spec.value("scene", nlohmann::json::object()));
  const DriftSpec drift = drift_from_json(spec.value("drift", nlohmann::json::object()));
  const std::uint64_t seed = a.seed ? *a.seed : spec.value("seed", std::uint64_t{0});
  const nlohmann::json config = {{"scene", to_json(scene)}, {"drift", to_json(drift)}, {"seed", seed}};
  std::vector<fs::path> inputs;
  if (!a.spec.empty()) inputs.emplace_back(a.spec);
  RunManifest m = begin("simulate", config, seed, inputs);
  const Simulation sim = simulate(scene, drift, seed);
  prepare_out(a.out);
  write_simulation(a.out, sim);
  write_run_manifest(a.out, std::move(m));
  ctx.out << "simulate: " << sim.sequence.length() << " frames -> " << a.out.string() << "\n";
  return kOk;
}

struct SweepArgs {
  fs::path data;
  std::string decoder;
  fs::path out;
  std::size_t frame = 0;
  int grid = 7;
  double lo = 0.5;
  double hi = 2.0;
  double epsilon = kDefaultEpsilon;
};

int cmd_sweep(const SweepArgs& a, Context& ctx) {
  const fs::path decoder_path = a.decoder.empty() ? a.data / "decoder.json" : fs::path(a.decoder);
  require(fs::exists(decoder_path), ErrorKind::InvalidInput, "decoder not found: " + decoder_path.string());
  require(a.grid >= 1 && a.lo > 0.0 && a.hi >= a.lo, ErrorKind::InvalidInput, "bad sweep grid");
  const nlohmann::json config = {{"frame", a.frame}, {"grid", a.grid}, {"lo", a.lo}, {"hi", a.hi},
                                 {"epsilon", a.epsilon}};
  RunManifest m = begin("sweep", config, 0, {a.data, decoder_path});
  const Sequence seq = load_sequence(a.data);
  const SyntheticDecoder dec = load_decoder(decoder_path);
  require(a.frame < seq.length(), ErrorKind::InvalidInput, "frame out of range");
  const auto& fr = seq.frames[a.frame];
  require(fr.feature.has_value(), ErrorKind::InvalidInput, "frame has no encoder feature");
  const auto records = run_sweep(*fr.feature, FrameDecoder(dec, a.frame), fr.gt,
                                 uniform_grid(a.grid, a.lo, a.hi), a.epsilon);
  const SweepSummary summary = summarize(records);
  prepare_out(a.out);
  io::write_atomic(a.out / "sweep.csv", sweep_csv(records));
  nlohmann::json sj = to_json(summary);
  sj["frame"] = a.frame;
  io::write_json(a.out / "summary.json", sj);
  write_run_manifest(a.out, std::move(m));
  ctx.out << "sweep: " << summary.points << " points, scale ratio " << summary.scale_ratio()
          << ", abs_rel spread " << summary.abs_rel_spread() << "\n";
  require(summary.failures < summary.points, ErrorKind::Numeric, "every sweep point failed");
  return kOk;
}

struct PipelineArgs {
  fs::path data;
  fs::path out;
  std::string stabilizer = "none";
};

int cmd_pipeline(const PipelineArgs& a, Context& ctx) {
  std::vector<fs::path> inputs = {a.data};
  const bool stabilize = a.stabilizer != "none";
  if (stabilize) {
    require(fs::is_directory(a.stabilizer), ErrorKind::InvalidInput,
            "stabilizer must be 'none' or a checkpoint directory");
    inputs.emplace_back(a.stabilizer);
  }
  RunManifest m = begin("pipeline", {{"stabilizer", stabilize ? "checkpoint" : "none"}}, 0, inputs);
  const Simulation sim = load_simulation(a.data);
  Sequence seq;
  nlohmann::json info = {{"kind", "none"}};
  if (stabilize) {
    const DyfnParams params = load_params(a.stabilizer);
    const std::size_t c = sim.sequence.frames.at(0).feature->dim(0);
    require(params.config.channels == c, ErrorKind::InvalidInput,
            "checkpoint expects " + std::to_string(params.config.channels) + " channels, data has " +
                std::to_string(c));
    seq = stabilize_stream(sim, params);
    info = {{"kind", "dyfn"}, {"cell", std::string(to_string(params.config.cell))},
            {"parameters", params.count()}};
  } else {
    seq = decode_stream(sim);
  }
  seq.metadata.erase("decoder");
  seq.metadata["stabilizer"] = info;
  prepare_out(a.out);
  write_sequence(a.out, seq);
  write_run_manifest(a.out, std::move(m));
  ctx.out << "pipeline: " << seq.length() << " frames, stabilizer " << info["kind"].get<std::string>()
          << " -> " << a.out.string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::vector<std::string> data;
  fs::path out;
  std::string config;
  std::optional<std::size_t> steps, clip_len, batch, checkpoint_every, hidden, kernel;
  std::optional<int> stride_max;
  std::optional<std::string> strategy, cell, init;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, Context& ctx) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(io::read_json(a.config));
  if (a.steps) cfg.steps = *a.steps;
  if (a.clip_len) cfg.clip_length = *a.clip_len;
  if (a.batch) cfg.batch = *a.batch;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.stride_max) cfg.stride_max = *a.stride_max;
  if (a.strategy) cfg.strategy = parse_strategy(*a.strategy);
  if (a.cell) cfg.dyfn.cell = parse_cell_kind(*a.cell);
  if (a.init) cfg.dyfn.init = parse_init_mode(*a.init);
  if (a.hidden) cfg.dyfn.hidden = *a.hidden;
  if (a.kernel) cfg.dyfn.kernel = *a.kernel;
  if (a.lr) cfg.adam.lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;

  std::vector<Simulation> sims;
  std::vector<fs::path> inputs;
  for (const auto& d : a.data) {
    inputs.emplace_back(d);
    sims.push_back(load_simulation(d));
  }
  if (!a.config.empty()) inputs.emplace_back(a.config);
  const std::size_t c = sims.at(0).sequence.frames.at(0).feature->dim(0);
  for (const auto& s : sims)
    require(s.sequence.frames.at(0).feature->dim(0) == c, ErrorKind::InvalidInput,
            "training sequences disagree on the channel count");
  if (a.config.empty()) cfg.dyfn.channels = c;
  require(cfg.dyfn.channels == c, ErrorKind::InvalidInput, "config channels do not match the data");
  validate_train_config(cfg);

  RunManifest m = begin("train", to_json(cfg), cfg.seed, inputs);
  prepare_out(a.out);
  const TrainResult r = train(sims, cfg, a.out);
  for (const auto& w : r.warnings) ctx.err << "warning: " << w << "\n";
  io::write_json(a.out / "train_config.json", to_json(cfg));
  write_run_manifest(a.out, std::move(m));
  ctx.out << "train: " << cfg.steps << " steps";
  if (!r.log.empty()) ctx.out << ", final loss " << r.log.back().report.total;
  ctx.out << " -> " << (a.out / "final").string() << "\n";
  return kOk;
}

struct EvalArgs {
  fs::path data;
  fs::path out;
  std::string protocol = "video";
  std::string intervals;
  std::string mode = "l2";
};

int cmd_eval(const EvalArgs& a, Context& ctx) {
  const Protocol protocol = parse_protocol(a.protocol);
  const auto intervals = parse_intervals(a.intervals);
  AlignOptions opts;
  require(a.mode == "l2" || a.mode == "l1", ErrorKind::InvalidInput, "mode must be l2 or l1");
  opts.mode = a.mode == "l2" ? AlignMode::WeightedL2 : AlignMode::IrlsL1;
  RunManifest m = begin("eval", {{"protocol", a.protocol}, {"intervals", intervals}, {"mode", a.mode}}, 0, {a.data});
  const Sequence seq = load_sequence(a.data);
  const SequenceEvaluation e = evaluate_sequence(seq, protocol, intervals, opts);
  prepare_out(a.out);
  io::write_json(a.out / "metrics.json", to_json(e));
  write_run_manifest(a.out, std::move(m));
  ctx.out << "eval " << a.protocol << ": abs_rel " << e.pooled.abs_rel << " delta1 " << e.pooled.delta1 << "\n";
  return kOk;
}

struct ReconstructArgs {
  fs::path data;
  fs::path out;
  std::string alignment = "global";
  std::string mode = "odometry";
  std::size_t correspondences = 200;
  double outliers = 0.0;
  double threshold = 0.02;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
};

int cmd_reconstruct(const ReconstructArgs& a, Context& ctx) {
  require(a.alignment == "global" || a.alignment == "first_frame" || a.alignment == "none",
          ErrorKind::InvalidInput, "alignment must be global, first_frame or none");
  require(a.mode == "gt" || a.mode == "odometry", ErrorKind::InvalidInput, "mode must be gt or odometry");
  const nlohmann::json config = {{"alignment", a.alignment}, {"mode", a.mode},
                                 {"correspondences", a.correspondences}, {"outliers", a.outliers},
                                 {"threshold", a.threshold}, {"iterations", a.iterations}};
  RunManifest m = begin("reconstruct", config, a.seed, {a.data});
  const Sequence seq = load_sequence(a.data);
  AffineAlignment align;
  if (a.alignment == "global") align = solve_affine_global(seq);
  if (a.alignment == "first_frame") align = solve_affine_firstframe(seq);

  FuseConfig fc;
  fc.mode = a.mode == "gt" ? ReferenceMode::GroundTruth : ReferenceMode::Odometry;
  fc.relative_threshold = a.threshold;
  fc.ransac.max_iterations = a.iterations;
  const CorrespondenceSpec spec{a.correspondences, a.outliers};
  const std::uint64_t seed = a.seed;
  auto provider = [&](std::size_t j, const std::vector<std::size_t>& refs, const std::vector<PoseSE3>& poses) {
    return generate_correspondences(seq, j, refs, poses, align, spec, derive_seed(seed, "correspondences", j)).set;
  };
  const Reconstruction r = fuse_stream(seq, align, provider, fc);

  prepare_out(a.out);
  io::write_atomic(a.out / "reconstruction.ply", ply_bytes(r));
  nlohmann::json pj = poses_json(r);
  pj["alignment"] = {{"s", align.scale}, {"t", align.shift}};
  io::write_json(a.out / "poses.json", pj);
  write_run_manifest(a.out, std::move(m));

  std::size_t starved = 0;
  for (std::size_t j = 1; j < r.frames.size(); ++j) {
    const auto& f = r.frames[j];
    if (!f.solved) ctx.err << "frame " << j << ": " << f.message << "\n";
    if (f.correspondences < 3) ++starved;
  }
  const std::size_t total = r.frames.size();
  ctx.out << "reconstruct: " << r.solved << "/" << total << " frames solved, " << r.points() << " points\n";
  if (total > 1 && starved == total - 1) {
    ctx.err << "error: every frame has fewer than 3 correspondences\n";
    return kNumeric;
  }
  if (10 * r.solved < 9 * total) {
    ctx.err << "error: fewer than 90% of frames solved\n";
    return kNumeric;
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  kernels::configure_threads();
  Context ctx{out, err};
  CLI::App app{"Streaming geometry stabilization with dynamic feature normalization", "dyfn"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Generate a drifting synthetic stream");
  s_sim->add_option("--spec", sim.spec, "JSON file with scene, drift and seed")->check(CLI::ExistingFile);
  s_sim->add_option("--out", sim.out, "Output directory")->required();
  s_sim->add_option("--seed", sim.seed, "Master seed (overrides the seed in --spec)");

  SweepArgs sw;
  auto* s_sweep = app.add_subcommand("sweep", "Statistic modulation sweep on one frame");
  s_sweep->add_option("--data", sw.data, "Simulation directory")->required()->check(CLI::ExistingDirectory);
  s_sweep->add_option("--decoder", sw.decoder, "Decoder JSON (default: <data>/decoder.json)");
  s_sweep->add_option("--out", sw.out, "Output directory")->required();
  s_sweep->add_option("--frame", sw.frame, "Frame index");
  s_sweep->add_option("--grid", sw.grid, "Points per axis");
  s_sweep->add_option("--lo", sw.lo, "Smallest multiplier");
  s_sweep->add_option("--hi", sw.hi, "Largest multiplier");
  s_sweep->add_option("--epsilon", sw.epsilon, "Normalization epsilon");

  PipelineArgs pl;
  auto* s_pipe = app.add_subcommand("pipeline", "Encode, optionally stabilize, and decode a stream");
  s_pipe->add_option("--data", pl.data, "Simulation directory")->required()->check(CLI::ExistingDirectory);
  s_pipe->add_option("--out", pl.out, "Output directory")->required();
  s_pipe->add_option("--stabilizer", pl.stabilizer, "'none' or a checkpoint directory");

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Fit the stabilizer with the decoder frozen");
  s_train->add_option("--data", tr.data, "Simulation directories")->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--out", tr.out, "Output directory")->required();
  s_train->add_option("--config", tr.config, "Training config JSON")->check(CLI::ExistingFile);
  s_train->add_option("--steps", tr.steps);
  s_train->add_option("--clip-len", tr.clip_len);
  s_train->add_option("--stride-max", tr.stride_max);
  s_train->add_option("--batch", tr.batch);
  s_train->add_option("--checkpoint-every", tr.checkpoint_every);
  s_train->add_option("--strategy", tr.strategy, "first_frame|global");
  s_train->add_option("--cell", tr.cell, "convgru|gru");
  s_train->add_option("--init", tr.init, "standard|random|zero");
  s_train->add_option("--hidden", tr.hidden);
  s_train->add_option("--kernel", tr.kernel);
  s_train->add_option("--lr", tr.lr);
  s_train->add_option("--seed", tr.seed);

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Depth metrics under an alignment protocol");
  s_eval->add_option("--data", ev.data, "Predictions directory")->required()->check(CLI::ExistingDirectory);
  s_eval->add_option("--out", ev.out, "Output directory")->required();
  s_eval->add_option("--protocol", ev.protocol, "video|image|metric");
  s_eval->add_option("--intervals", ev.intervals, "Comma-separated prefix lengths");
  s_eval->add_option("--mode", ev.mode, "l2|l1");

  ReconstructArgs rc;
  auto* s_rec = app.add_subcommand("reconstruct", "Solve poses and fuse a point cloud");
  s_rec->add_option("--data", rc.data, "Predictions directory")->required()->check(CLI::ExistingDirectory);
  s_rec->add_option("--out", rc.out, "Output directory")->required();
  s_rec->add_option("--alignment", rc.alignment, "global|first_frame|none");
  s_rec->add_option("--mode", rc.mode, "gt|odometry");
  s_rec->add_option("--correspondences", rc.correspondences);
  s_rec->add_option("--outliers", rc.outliers);
  s_rec->add_option("--threshold", rc.threshold, "Inlier threshold relative to median depth");
  s_rec->add_option("--iterations", rc.iterations);
  s_rec->add_option("--seed", rc.seed);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadArgs;
  }

  try {
    if (*s_sim) return cmd_simulate(sim, ctx);
    if (*s_sweep) return cmd_sweep(sw, ctx);
    if (*s_pipe) return cmd_pipeline(pl, ctx);
    if (*s_train) return cmd_train(tr, ctx);
    if (*s_eval) return cmd_eval(ev, ctx);
    if (*s_rec) return cmd_reconstruct(rc, ctx);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "error (json): " << e.what() << "\n";
    return kBadArgs;
  } catch (const fs::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kBadArgs;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

}  // namespace dyfn::cli
