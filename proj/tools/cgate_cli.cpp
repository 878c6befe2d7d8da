#include <csignal>
#include <cstdio>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cgate/calibrate.hpp"
#include "cgate/error.hpp"
#include "cgate/eval.hpp"
#include "cgate/log.hpp"
#include "cgate/scoring.hpp"
#include "cgate/serve.hpp"
#include "cgate/synthgen.hpp"

using namespace cgate;
namespace fs = std::filesystem;

namespace {

std::vector<double> parse_grid(const std::string& text) {
  if (text.empty()) return default_grid();
  std::vector<double> grid;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorCode::kConfig, "bad grid value: " + item);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return grid;
}

void print_json(const Json& doc, const std::string& out) {
  if (!out.empty()) write_file(out, doc.dump(2) + "\n");
  else std::cout << doc.dump(2) << "\n";
}

std::vector<ScoredRecord> scored(const Dataset& d, const std::string& trigger, const std::string& filter) {
  const auto t = Scorer::load(trigger, d.schema);
  const auto f = Scorer::load(filter, d.schema);
  return score_dataset(d, t, f);
}

Json sweep_json(std::span<const SweepPoint> pts, double target) {
  Json list = Json::array();
  for (const auto& p : pts) {
    list.push_back({{"grid_pct", p.grid_pct},
                    {"feasible", p.feasible},
                    {"trigger_threshold", real_to_json(p.policy.trigger_threshold)},
                    {"filter_threshold", p.feasible ? real_to_json(p.policy.filter_threshold) : Json(nullptr)},
                    {"realized_fnr", p.realized_fnr},
                    {"trigger_blocked", p.trigger_blocked},
                    {"trigger_fn", p.trigger_fn},
                    {"surviving_positives", p.surviving_positives},
                    {"remaining_budget", p.remaining_budget}});
  }
  return {{"target_fnr", target}, {"points", std::move(list)}};
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"cgate: completion gating toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic completion log");
  std::string gen_out, gen_world;
  std::int64_t gen_users = 0;
  double gen_context = -1, gen_split = 0;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--world", gen_world, "World config JSON (defaults built in)");
  gen->add_option("--users", gen_users, "Override user count");
  gen->add_option("--context-signal", gen_context, "Override context_signal_strength");
  gen->add_option("--split", gen_split, "Also write OUT/train and OUT/test with this user test fraction");

  // train
  auto* train = app.add_subcommand("train", "Train a boosted trigger or filter model");
  std::string train_task, train_data, train_out;
  gbdt::TrainConfig tc;
  train->add_option("--task", train_task)->required()->check(CLI::IsMember({"trigger", "filter"}));
  train->add_option("--data", train_data, "Training dataset directory")->required();
  train->add_option("--out", train_out, "Model artifact path")->required();
  train->add_option("--trees", tc.trees)->capture_default_str();
  train->add_option("--depth", tc.max_depth)->capture_default_str();
  train->add_option("--learning-rate", tc.learning_rate)->capture_default_str();
  train->add_option("--positive-weight", tc.positive_class_weight)->capture_default_str();
  train->add_option("--l2", tc.l2_leaf)->capture_default_str();

  // train-hybrid
  auto* trainh = app.add_subcommand("train-hybrid", "Train the context + tabular hybrid model");
  std::string th_task = "filter", th_data, th_val, th_out;
  hybrid::HybridConfig hc;
  trainh->add_option("--task", th_task)->check(CLI::IsMember({"trigger", "filter"}))->capture_default_str();
  trainh->add_option("--data", th_data)->required();
  trainh->add_option("--validation", th_val, "Dataset for per-epoch validation AUC");
  trainh->add_option("--out", th_out)->required();
  trainh->add_option("--epochs", hc.epochs)->capture_default_str();
  trainh->add_option("--batch-size", hc.batch_size)->capture_default_str();
  trainh->add_option("--step-size", hc.step_size)->capture_default_str();
  trainh->add_option("--embed-dim", hc.embed_dim)->capture_default_str();
  trainh->add_option("--vocab", hc.vocab_buckets)->capture_default_str();

  // calibrate / sweep / curve share scoring inputs
  std::string cal_data, cal_trigger, cal_filter, cal_out, cal_grid;
  double cal_fnr = 0.1, cal_point = 0;
  bool cal_rules = false;
  auto* calibrate = app.add_subcommand("calibrate", "Pick thresholds for one sweep point");
  calibrate->add_option("--data", cal_data, "Calibration dataset")->required();
  calibrate->add_option("--trigger", cal_trigger)->required();
  calibrate->add_option("--filter", cal_filter)->required();
  calibrate->add_option("--fnr", cal_fnr)->capture_default_str();
  calibrate->add_option("--grid-point", cal_point, "% generations blocked by the trigger")->capture_default_str();
  calibrate->add_flag("--block-non-compilable", cal_rules);
  calibrate->add_option("--out", cal_out, "policy.json path")->required();

  auto* sweep = app.add_subcommand("sweep", "Joint trigger/filter FNR budget sweep");
  sweep->add_option("--data", cal_data)->required();
  sweep->add_option("--trigger", cal_trigger)->required();
  sweep->add_option("--filter", cal_filter)->required();
  sweep->add_option("--fnr", cal_fnr)->capture_default_str();
  sweep->add_option("--grid", cal_grid, "Comma-separated percentages (default 0..60 step 5)");
  sweep->add_flag("--block-non-compilable", cal_rules);
  sweep->add_option("--out", cal_out);

  std::string eval_data;
  auto* curve = app.add_subcommand("curve", "Sweep on calibration data, replay on evaluation data");
  curve->add_option("--calib", cal_data, "Calibration dataset")->required();
  curve->add_option("--data", eval_data, "Evaluation dataset")->required();
  curve->add_option("--trigger", cal_trigger)->required();
  curve->add_option("--filter", cal_filter)->required();
  curve->add_option("--fnr", cal_fnr)->capture_default_str();
  curve->add_option("--grid", cal_grid);
  curve->add_flag("--block-non-compilable", cal_rules);
  curve->add_option("--out", cal_out, "TSV path")->required();

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "Replay a policy over an ungated log");
  std::string rp_policy;
  replay_cmd->add_option("--data", eval_data)->required();
  replay_cmd->add_option("--trigger", cal_trigger)->required();
  replay_cmd->add_option("--filter", cal_filter)->required();
  replay_cmd->add_option("--policy", rp_policy)->required();
  replay_cmd->add_option("--out", cal_out);

  // plot
  auto* plot = app.add_subcommand("plot", "Render a curve TSV as SVG");
  std::string plot_in, plot_out, plot_title;
  plot->add_option("--curve", plot_in)->required();
  plot->add_option("--out", plot_out)->required();
  plot->add_option("--title", plot_title);

  // ab
  auto* ab = app.add_subcommand("ab", "User-level bootstrap comparison of two arms");
  std::string arm_a, arm_b, ab_out;
  std::vector<std::string> ab_metrics;
  AbOptions ab_opt;
  ab->add_option("--arm-a", arm_a)->required();
  ab->add_option("--arm-b", arm_b)->required();
  ab->add_option("--metrics", ab_metrics)->delimiter(',');
  ab->add_option("--resamples", ab_opt.resamples)->capture_default_str();
  ab->add_flag("--pooled", ab_opt.pooled, "Pool events instead of averaging per-user metrics");
  ab->add_option("--out", ab_out, "ab_report.json path");

  // serve / bench
  auto* serve_cmd = app.add_subcommand("serve", "Run the gating service");
  std::string sv_schema, host = "127.0.0.1";
  int port = 7070;
  serve_cmd->add_option("--trigger", cal_trigger)->required();
  serve_cmd->add_option("--filter", cal_filter)->required();
  serve_cmd->add_option("--policy", rp_policy)->required();
  serve_cmd->add_option("--schema", sv_schema, "schema.json (default: built-in schema)");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();

  auto* bench_cmd = app.add_subcommand("bench", "Load-test a running service");
  std::size_t bench_n = 10000;
  int bench_c = 8;
  bench_cmd->add_option("--host", host)->capture_default_str();
  bench_cmd->add_option("--port", port)->capture_default_str();
  bench_cmd->add_option("-n,--requests", bench_n)->capture_default_str();
  bench_cmd->add_option("-c,--concurrency", bench_c)->capture_default_str();
  bench_cmd->add_option("--out", cal_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error:usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen) {
      auto cfg = gen_world.empty() ? synth::default_world()
                                   : synth::WorldConfig::from_json(Json::parse(read_file(gen_world)));
      cfg.seed = seed;
      if (gen_users > 0) cfg.user_count = gen_users;
      if (gen_context >= 0) {
        for (auto& [p, w] : cfg.profiles) p.context_signal_strength = gen_context;
      }
      const auto world = synth::generate(cfg);
      synth::write_world(gen_out, world);
      if (gen_split > 0) {
        const auto [tr, te] = split_by_user(world.dataset, gen_split, seed);
        io::write_dataset(fs::path(gen_out) / "train", tr);
        io::write_dataset(fs::path(gen_out) / "test", te);
      }
      const auto& m = world.dataset.manifest;
      std::cout << Json{{"events", m.event_count}, {"generations", m.generation_count}, {"users", m.user_count},
                        {"label_imbalance_trigger", real_to_json(m.label_imbalance_trigger)},
                        {"label_imbalance_filter", real_to_json(m.label_imbalance_filter)}}
                       .dump()
                << "\n";
    } else if (*train) {
      tc.seed = seed;
      const auto d = io::read_valid_dataset(train_data);
      const auto model = train_gbdt(d, task_from_string(train_task), tc);
      gbdt::save(model, train_out);
      std::cout << Json{{"model", train_out}, {"sha256", file_sha256_hex(train_out)}, {"trees", model.trees.size()}}.dump()
                << "\n";
    } else if (*trainh) {
      hc.seed = seed;
      const auto d = io::read_valid_dataset(th_data);
      std::optional<Dataset> val;
      if (!th_val.empty()) val = io::read_valid_dataset(th_val);
      hybrid::TrainReport report;
      const auto model = train_hybrid(d, val ? &*val : nullptr, task_from_string(th_task), hc, &report);
      hybrid::save(model, th_out);
      std::cout << Json{{"model", th_out}, {"sha256", file_sha256_hex(th_out)}, {"train_loss", report.train_loss},
                        {"validation_auc", report.validation_auc}}
                       .dump()
                << "\n";
    } else if (*calibrate) {
      const auto d = io::read_valid_dataset(cal_data);
      const auto rs = scored(d, cal_trigger, cal_filter);
      const std::vector<double> grid = {cal_point};
      const auto pt = sweep_joint(rs, cal_fnr, grid, HardRules{cal_rules}).front();
      if (!pt.feasible) {
        fail(ErrorCode::kInfeasible, fmt::format("grid point {}% exceeds the FNR budget (trigger alone loses {} of {} allowed)",
                                                 cal_point, pt.trigger_fn, pt.trigger_fn + pt.remaining_budget));
      }
      PolicyFile pf{pt.policy, PolicyProvenance{file_sha256_hex(cal_trigger), file_sha256_hex(cal_filter), cal_fnr,
                                                cal_point, pt.realized_fnr}};
      pf.save(cal_out);
      std::cout << pf.to_json().dump() << "\n";
    } else if (*sweep) {
      const auto d = io::read_valid_dataset(cal_data);
      const auto rs = scored(d, cal_trigger, cal_filter);
      const auto pts = sweep_joint(rs, cal_fnr, parse_grid(cal_grid), HardRules{cal_rules});
      print_json(sweep_json(pts, cal_fnr), cal_out);
    } else if (*curve) {
      const auto cd = io::read_valid_dataset(cal_data);
      const auto ed = io::read_valid_dataset(eval_data);
      require_replayable(ed);
      const auto pts = sweep_joint(scored(cd, cal_trigger, cal_filter), cal_fnr, parse_grid(cal_grid), HardRules{cal_rules});
      const auto c = build_curve(scored(ed, cal_trigger, cal_filter), pts, cal_fnr);
      export_curve(c, cal_out);
      std::cout << curve_to_tsv(c);
    } else if (*replay_cmd) {
      const auto d = io::read_valid_dataset(eval_data);
      require_replayable(d);
      const auto policy = PolicyFile::load(rp_policy);
      const auto t = Scorer::load(cal_trigger, d.schema);
      const auto f = Scorer::load(cal_filter, d.schema);
      print_json(replay(d, policy.policy, t, f).to_json(), cal_out);
    } else if (*plot) {
      plot_curve(parse_curve(plot_in), plot_out, plot_title);
    } else if (*ab) {
      ab_opt.seed = seed;
      if (ab_metrics.empty()) ab_metrics = ab_metric_names();
      const auto a = io::read_valid_dataset(arm_a);
      const auto b = io::read_valid_dataset(arm_b);
      print_json(ab_report_json(ab_compare(a, b, ab_metrics, ab_opt), ab_opt), ab_out);
    } else if (*serve_cmd) {
      const auto schema = sv_schema.empty() ? default_schema() : io::read_schema(sv_schema);
      const auto gate = serve::Gate::load(cal_trigger, cal_filter, rp_policy, schema);
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      serve::Server server(gate, host, port);
      server.start();
      std::cout << fmt::format("listening {}:{}", server.host(), server.port()) << std::endl;
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
      logger().info("stopped; unknown feature names seen: {}", gate.unknown_features());
    } else if (*bench_cmd) {
      const auto corpus = serve::bench_corpus(bench_n, seed);
      print_json(serve::bench(host, port, corpus, bench_c).to_json(), cal_out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error:%s: %s\n", std::string(error_tag(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error:internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
