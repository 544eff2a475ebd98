// nwprune: redundant-filter pruning workflow on NWB1 bundles.
//
//   inspect | validate | sweep | plan | prune | cost | check
//
// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "CLI11.hpp"
#include "nwprune/nwprune.hpp"

namespace fs = std::filesystem;
using namespace nwprune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool seed_given = false;
  unsigned jobs = 1;
  std::string format = "text";
};

struct ConfigFlags {
  std::string config_path;
  std::optional<double> tau;
  std::vector<std::string> stage_tau;
  std::vector<std::string> skip;
  std::string heuristic;
  std::string rep;
  bool no_residual_rule = false;
  CLI::Option* tau_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file mirroring the prune configuration")->check(CLI::ExistingFile);
    tau_opt = app->add_option("--tau", tau, "Cluster similarity threshold in [-1, 1]");
    app->add_option("--stage-tau", stage_tau, "Per-stage threshold, stage=value (repeatable)");
    app->add_option("--skip", skip, "Layer id to leave unpruned (repeatable)");
    app->add_option("--heuristic", heuristic, "A: one representative per cluster; B: random n - n_f drop")
        ->check(CLI::IsMember({"A", "B"}));
    app->add_option("--rep", rep, "Representative choice for heuristic A")
        ->check(CLI::IsMember({"random", "first-index"}));
    app->add_flag("--no-residual-rule", no_residual_rule, "Allow pruning convs that feed residual additions");
  }

  PruneConfig resolve(const GlobalOptions& g) const {
    PruneConfig c;
    if (!config_path.empty()) {
      try {
        c = config_from_json(json::parse(read_file(config_path)));
      } catch (const json::parse_error& e) {
        throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
      }
    }
    if (tau) c.default_tau = *tau;
    for (const auto& st : stage_tau) {
      const auto eq = st.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--stage-tau expects stage=value, got '" + st + "'");
      try {
        std::size_t used = 0;
        const double v = std::stod(st.substr(eq + 1), &used);
        if (used != st.size() - eq - 1) throw std::invalid_argument(st);
        c.per_stage_tau[st.substr(0, eq)] = v;
      } catch (const std::exception&) {
        throw ConfigError("--stage-tau value is not a number: '" + st + "'");
      }
    }
    c.skip_layers.insert(skip.begin(), skip.end());
    if (!heuristic.empty()) c.heuristic = parse_heuristic(heuristic);
    if (!rep.empty()) c.rep = parse_rep_mode(rep);
    if (no_residual_rule) c.residual_rule = false;
    if (g.seed_given) c.seed = g.seed;
    return c;
  }
};

std::string tau_text(double t) {
  std::string s = fmt::format("{}", t);
  if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos) s += ".0";
  return s;
}

std::string utc_timestamp() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(
                                                  std::chrono::system_clock::now())));
}

json file_entry(const fs::path& p) { return {{"path", p.string()}, {"sha256", sha256_hex(read_file(p))}}; }

/// Writes <primary output>.manifest.json describing one artifact-producing run.
void write_manifest(const fs::path& primary, const std::string& command, const json& config,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json in = json::array(), out = json::array();
  for (const auto& p : inputs) in.push_back(file_entry(p));
  for (const auto& p : outputs) out.push_back(file_entry(p));
  const json manifest{{"command", command},       {"config", config},
                      {"inputs", in},             {"outputs", out},
                      {"tool_version", kToolVersion}, {"timestamp", utc_timestamp()}};
  write_file(fs::path(primary.string() + ".manifest.json"), manifest.dump(2) + "\n");
}

ModelBundle load_checked(const fs::path& p) { return read_bundle(p); }

// --- inspect / validate ----------------------------------------------------------

int cmd_inspect(const fs::path& path, const GlobalOptions& g) {
  const ModelBundle b = decode_bundle(read_file(path));
  const auto diags = validate_bundle(b);

  if (g.format == "json") {
    json diag = json::array();
    for (const auto& d : diags) diag.push_back(d.str());
    json tensors = json::array();
    for (const auto& t : b.tensors) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    std::cout << json{{"graph", to_json(b.graph)}, {"tensors", tensors}, {"metadata", b.metadata}, {"diagnostics", diag}}
                     .dump(2)
              << "\n";
    return diags.empty() ? kExitOk : kExitFailure;
  }
  if (g.format == "csv") {
    std::cout << "layer_id,kind,in_channels,out_channels,in_h,in_w,out_h,out_w,kernel,stride,padding,stage\n";
    for (const auto& l : b.graph.layers)
      std::cout << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", l.id, to_string(l.kind), l.in_channels,
                               l.out_channels, l.in_spatial.h, l.in_spatial.w, l.out_spatial.h, l.out_spatial.w,
                               l.kernel, l.stride, l.padding, l.stage);
    return diags.empty() ? kExitOk : kExitFailure;
  }

  std::cout << "bundle: " << path.string() << "\n";
  for (const auto& [k, v] : b.metadata) std::cout << "  " << k << ": " << v << "\n";
  if (b.tensors.empty())
    std::cout << "no tensors (architecture-only)\n";
  else
    std::cout << b.tensors.size() << " tensors\n";
  std::size_t w = 5;
  for (const auto& l : b.graph.layers) w = std::max(w, l.id.size());
  std::cout << fmt::format("{:<{}} {:<10} {:>9} {:>9} {:>9} {:>7}  {}\n", "layer", w, "kind", "v x h", "in", "#Maps",
                           "k/s/p", "weights");
  for (const auto& l : b.graph.layers) {
    std::string ksp = l.kind == LayerKind::conv2d                                       ? fmt::format("{}/{}/{}", l.kernel, l.stride, l.padding)
                      : (l.kind == LayerKind::maxpool || l.kind == LayerKind::avgpool) ? fmt::format("{}/{}", l.window, l.stride)
                                                                                        : "";
    std::string weights;
    for (const auto& ref : l.weight_refs) {
      const TensorRecord* t = b.find_tensor(ref);
      weights += (weights.empty() ? "" : " ") + ref + (t ? detail::shape_str(t->shape) : "[missing]");
    }
    std::cout << fmt::format("{:<{}} {:<10} {:>9} {:>9} {:>9} {:>7}  {}\n", l.id, w, to_string(l.kind),
                             fmt::format("{}x{}", l.out_spatial.h, l.out_spatial.w), l.in_channels, l.out_channels,
                             ksp, weights);
  }
  const auto convs = std::count_if(b.graph.layers.begin(), b.graph.layers.end(),
                                   [](const LayerSpec& l) { return l.kind == LayerKind::conv2d; });
  std::cout << convs << " conv2d layers\n";
  if (diags.empty()) {
    std::cout << "validation: ok\n";
    return kExitOk;
  }
  std::cout << "validation: " << diags.size() << " problem(s)\n";
  std::cerr << format_diagnostics(diags);
  return kExitFailure;
}

int cmd_validate(const fs::path& path) {
  const ModelBundle b = decode_bundle(read_file(path));
  const auto diags = validate_bundle(b);
  if (diags.empty()) {
    std::cout << path.string() << ": ok\n";
    return kExitOk;
  }
  std::cerr << format_diagnostics(diags);
  return kExitFailure;
}

// --- sweep -----------------------------------------------------------------------

struct SweepArgs {
  fs::path bundle;
  fs::path out;
  std::vector<double> taus;
  double tau_min = 0.1;
  double tau_max = 1.0;
  double tau_step = 0.01;
};

int cmd_sweep(const SweepArgs& a, const ConfigFlags& flags, const GlobalOptions& g) {
  const PruneConfig config = flags.resolve(g);
  const ModelBundle b = load_checked(a.bundle);
  validate_config(config, b.graph);
  const std::vector<double> taus = a.taus.empty() ? tau_grid(a.tau_min, a.tau_max, a.tau_step) : a.taus;
  for (double t : taus)
    if (!(t >= -1.0 && t <= 1.0)) throw ConfigError("tau " + tau_text(t) + " outside [-1, 1]");

  const auto layers = prunable_layers(b.graph, config);
  std::vector<std::vector<SweepPoint>> results(layers.size());
  parallel_for(layers.size(), g.jobs, [&](std::size_t i) { results[i] = sweep(kernel_matrix(b, layers[i]), taus); });

  std::string csv = "layer_id,tau,n_f\n";
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (const auto& p : results[i]) csv += fmt::format("{},{},{}\n", layers[i], tau_text(p.tau), p.n_f);

  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
    write_manifest(a.out, "sweep", {{"taus", taus}, {"prune_config", to_json(config)}}, {a.bundle}, {a.out});
    std::cout << fmt::format("wrote {} rows for {} layers to {}\n", layers.size() * taus.size(), layers.size(),
                             a.out.string());
  }
  return kExitOk;
}

// --- plan / prune ----------------------------------------------------------------

void print_plan_summary(const PrunePlan& plan) {
  std::size_t w = 5;
  for (const auto& l : plan.layers) w = std::max(w, l.layer_id.size());
  std::cout << fmt::format("{:<{}} {:>8} {:>6} {:>6} {:>6}\n", "layer", w, "tau", "n'", "n_f", "drop");
  for (const auto& l : plan.layers) {
    std::string tau = "-";
    for (const auto& c : plan.provenance.clusterings)
      if (c.layer_id == l.layer_id) tau = tau_text(c.tau);
    std::cout << fmt::format("{:<{}} {:>8} {:>6} {:>6} {:>6}\n", l.layer_id, w, tau, l.n_original, l.n_f,
                             l.drop.size());
  }
}

void print_report(const CostReport& r, const GlobalOptions& g) {
  if (g.format == "csv")
    std::cout << format_cost_csv(r);
  else if (g.format == "json")
    std::cout << to_json(r).dump(2) << "\n";
  else
    std::cout << format_cost_text(r);
}

int cmd_plan(const fs::path& bundle_path, const fs::path& out, const ConfigFlags& flags, const GlobalOptions& g) {
  const PruneConfig config = flags.resolve(g);
  const ModelBundle b = load_checked(bundle_path);
  validate_config(config, b.graph);
  const PrunePlan plan = make_plan(b, config, g.jobs);
  write_plan(plan, out);
  write_manifest(out, "plan", to_json(config), {bundle_path}, {out});
  print_plan_summary(plan);
  return kExitOk;
}

struct PruneArgs {
  fs::path bundle;
  fs::path out;
  fs::path plan_in;
  fs::path plan_out;
};

int cmd_prune(const PruneArgs& a, const ConfigFlags& flags, const GlobalOptions& g) {
  const ModelBundle b = load_checked(a.bundle);
  PrunePlan plan;
  if (!a.plan_in.empty()) {
    plan = read_plan(a.plan_in);
  } else {
    const PruneConfig config = flags.resolve(g);
    validate_config(config, b.graph);
    plan = make_plan(b, config, g.jobs);
  }

  ModelBundle pruned = apply_plan(b, plan);
  pruned.metadata["source_sha256"] = plan.provenance.bundle_sha256;
  pruned.metadata["tool_version"] = std::string(kToolVersion);
  const auto diags = validate_bundle(pruned);
  if (!diags.empty()) {
    std::cerr << format_diagnostics(diags);
    return kExitFailure;
  }

  std::vector<fs::path> outputs{a.out};
  if (!a.plan_out.empty()) {
    write_plan(plan, a.plan_out);
    outputs.push_back(a.plan_out);
  }
  write_bundle(pruned, a.out);
  std::vector<fs::path> inputs{a.bundle};
  if (!a.plan_in.empty()) inputs.push_back(a.plan_in);
  write_manifest(a.out, "prune", to_json(plan.config), inputs, outputs);

  if (g.format == "text") print_plan_summary(plan);
  print_report(diff_cost(b.graph, pruned.graph), g);
  return kExitOk;
}

// --- cost / check ----------------------------------------------------------------

int cmd_cost(const std::vector<fs::path>& paths, const fs::path& plan_path, bool full, const GlobalOptions& g) {
  const ParamMode mode = full ? ParamMode::full : ParamMode::weights;
  const ModelBundle before = load_checked(paths.front());
  CostReport r;
  if (paths.size() > 1)
    r = diff_cost(before.graph, load_checked(paths[1]).graph, mode);
  else if (!plan_path.empty())
    r = diff_cost(before.graph, read_plan(plan_path), mode);
  else
    r = model_cost(before.graph, mode);
  print_report(r, g);
  return kExitOk;
}

int cmd_check(const fs::path& before_path, const fs::path& after_path, const fs::path& plan_path,
              const CheckOptions& opt) {
  const ModelBundle before = load_checked(before_path);
  const ModelBundle after = decode_bundle(read_file(after_path));
  const PrunePlan plan = read_plan(plan_path);
  const CheckResult r = run_checks(before, after, plan, opt);
  for (const auto& l : r.lines)
    std::cout << fmt::format("[{}] {}: {}\n", l.passed ? "PASS" : "FAIL", l.name, l.message);
  std::cout << (r.passed() ? "check: pass\n" : "check: fail\n");
  return r.passed() ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Redundant-filter pruning for convolutional networks stored as NWB1 bundles"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--jobs", g.jobs, "Worker threads for per-layer clustering")->check(CLI::PositiveNumber);
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"text", "csv", "json"}));

  fs::path inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Print the layer table and validation diagnostics");
  inspect->add_option("bundle", inspect_path)->required()->check(CLI::ExistingFile);

  fs::path validate_path;
  auto* validate = app.add_subcommand("validate", "Check every bundle invariant");
  validate->add_option("bundle", validate_path)->required()->check(CLI::ExistingFile);

  SweepArgs sweep_args;
  ConfigFlags sweep_flags;
  auto* sweep_cmd = app.add_subcommand("sweep", "n_f versus tau for every prunable layer, as CSV");
  sweep_cmd->add_option("bundle", sweep_args.bundle)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("-o,--out", sweep_args.out, "CSV output (stdout if omitted)");
  sweep_cmd->add_option("--taus", sweep_args.taus, "Explicit thresholds, comma separated")->delimiter(',');
  sweep_cmd->add_option("--tau-min", sweep_args.tau_min, "Grid start")->capture_default_str();
  sweep_cmd->add_option("--tau-max", sweep_args.tau_max, "Grid end")->capture_default_str();
  sweep_cmd->add_option("--tau-step", sweep_args.tau_step, "Grid step")->capture_default_str();
  sweep_flags.attach(sweep_cmd);

  fs::path plan_bundle, plan_out;
  ConfigFlags plan_flags;
  auto* plan_cmd = app.add_subcommand("plan", "Cluster filters and write a prune plan");
  plan_cmd->add_option("bundle", plan_bundle)->required()->check(CLI::ExistingFile);
  plan_cmd->add_option("-o,--out", plan_out, "Plan JSON output")->required();
  plan_flags.attach(plan_cmd);

  PruneArgs prune_args;
  ConfigFlags prune_flags;
  auto* prune_cmd = app.add_subcommand("prune", "Plan (or load a plan) and write the pruned bundle");
  prune_cmd->add_option("bundle", prune_args.bundle)->required()->check(CLI::ExistingFile);
  prune_cmd->add_option("-o,--out", prune_args.out, "Pruned bundle output")->required();
  prune_cmd->add_option("--plan", prune_args.plan_in, "Apply this plan instead of building one")
      ->check(CLI::ExistingFile);
  prune_cmd->add_option("--plan-out", prune_args.plan_out, "Also write the plan here");
  prune_flags.attach(prune_cmd);

  std::vector<fs::path> cost_paths;
  fs::path cost_plan;
  bool cost_full = false;
  auto* cost_cmd = app.add_subcommand("cost", "FLOP/parameter report for one graph, or before/after");
  cost_cmd->add_option("bundles", cost_paths, "Architecture or bundle file, optionally a second to compare")
      ->required()
      ->expected(1, 2)
      ->check(CLI::ExistingFile);
  cost_cmd->add_option("--plan", cost_plan, "Compare against the graph this plan produces")->check(CLI::ExistingFile);
  cost_cmd->add_flag("--full", cost_full, "Also count biases and batchnorm scale/shift");

  fs::path check_before, check_after, check_plan;
  CheckOptions check_opt;
  auto* check_cmd = app.add_subcommand("check", "Verify a pruned bundle against its input and plan");
  check_cmd->add_option("before", check_before)->required()->check(CLI::ExistingFile);
  check_cmd->add_option("after", check_after)->required()->check(CLI::ExistingFile);
  check_cmd->add_option("plan", check_plan)->required()->check(CLI::ExistingFile);
  check_cmd->add_option("--inputs", check_opt.inputs, "Random inputs for the equivalence check")->capture_default_str();
  check_cmd->add_option("--tol", check_opt.tolerance, "Absolute output tolerance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  g.seed_given = seed_opt->count() > 0;
  check_opt.seed = g.seed;

  try {
    if (*inspect) return cmd_inspect(inspect_path, g);
    if (*validate) return cmd_validate(validate_path);
    if (*sweep_cmd) return cmd_sweep(sweep_args, sweep_flags, g);
    if (*plan_cmd) return cmd_plan(plan_bundle, plan_out, plan_flags, g);
    if (*prune_cmd) return cmd_prune(prune_args, prune_flags, g);
    if (*cost_cmd) return cmd_cost(cost_paths, cost_plan, cost_full, g);
    if (*check_cmd) return cmd_check(check_before, check_after, check_plan, check_opt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
