// Python surface: JSON travels as strings, the package wrapper does the dict
// conversion.
#include <memory>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cgate/calibrate.hpp"
#include "cgate/error.hpp"
#include "cgate/eval.hpp"
#include "cgate/scoring.hpp"
#include "cgate/serve.hpp"
#include "cgate/synthgen.hpp"

namespace py = pybind11;
using namespace cgate;
namespace fs = std::filesystem;

namespace {

FeatureSchema schema_or_default(const std::string& path) {
  return path.empty() ? default_schema() : io::read_schema(path);
}

std::vector<ScoredRecord> scored(const std::string& data, const std::string& trigger, const std::string& filter) {
  const auto d = io::read_valid_dataset(data);
  return score_dataset(d, Scorer::load(trigger, d.schema), Scorer::load(filter, d.schema));
}

Json sweep_json(std::span<const SweepPoint> pts) {
  Json out = Json::array();
  for (const auto& p : pts) {
    out.push_back({{"grid_pct", p.grid_pct},
                   {"feasible", p.feasible},
                   {"trigger_threshold", real_to_json(p.policy.trigger_threshold)},
                   {"filter_threshold", p.feasible ? real_to_json(p.policy.filter_threshold) : Json(nullptr)},
                   {"realized_fnr", p.realized_fnr},
                   {"trigger_blocked", p.trigger_blocked},
                   {"trigger_fn", p.trigger_fn},
                   {"surviving_positives", p.surviving_positives},
                   {"remaining_budget", p.remaining_budget}});
  }
  return out;
}

std::vector<double> grid_or_default(const std::vector<double>& grid) { return grid.empty() ? default_grid() : grid; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "cgate native core";

  static py::exception<Error> error(m, "CgateError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // args = (tag, message)
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string(error_tag(e.code())), e.what()).ptr());
    } catch (const Json::exception& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple("parse", e.what()).ptr());
    }
  });

  m.def("default_world", [] { return synth::default_world().to_json().dump(); });

  m.def(
      "generate",
      [](const std::string& config, const std::string& out, double split, std::uint64_t seed) {
        auto cfg = synth::WorldConfig::from_json(Json::parse(config));
        cfg.seed = seed;
        const auto world = synth::generate(cfg);
        synth::write_world(out, world);
        if (split > 0) {
          const auto [tr, te] = split_by_user(world.dataset, split, seed);
          io::write_dataset(fs::path(out) / "train", tr);
          io::write_dataset(fs::path(out) / "test", te);
        }
        return world.dataset.manifest.to_json().dump();
      },
      py::arg("config"), py::arg("out"), py::arg("split") = 0.0, py::arg("seed") = 1,
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "validate",
      [](const std::string& dir) {
        Json out = Json::array();
        for (const auto& v : validate_dataset(fs::path(dir)).violations) {
          out.push_back({{"kind", v.kind}, {"message", v.message}});
        }
        return out.dump();
      },
      py::arg("dir"));

  m.def(
      "train",
      [](const std::string& task, const std::string& data, const std::string& out, const std::string& config) {
        const auto cfg = gbdt::TrainConfig::from_json(Json::parse(config));
        const auto d = io::read_valid_dataset(data);
        const auto model = train_gbdt(d, task_from_string(task), cfg);
        gbdt::save(model, out);
        return Json{{"model", out}, {"sha256", file_sha256_hex(out)}, {"trees", model.trees.size()}}.dump();
      },
      py::arg("task"), py::arg("data"), py::arg("out"), py::arg("config") = "{}",
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "train_hybrid",
      [](const std::string& task, const std::string& data, const std::string& validation, const std::string& out,
         const std::string& config) {
        const auto cfg = hybrid::HybridConfig::from_json(Json::parse(config));
        const auto d = io::read_valid_dataset(data);
        std::optional<Dataset> val;
        if (!validation.empty()) val = io::read_valid_dataset(validation);
        hybrid::TrainReport report;
        const auto model = train_hybrid(d, val ? &*val : nullptr, task_from_string(task), cfg, &report);
        hybrid::save(model, out);
        return Json{{"model", out},
                    {"sha256", file_sha256_hex(out)},
                    {"train_loss", report.train_loss},
                    {"validation_auc", report.validation_auc}}
            .dump();
      },
      py::arg("task"), py::arg("data"), py::arg("validation"), py::arg("out"), py::arg("config") = "{}",
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "sweep",
      [](const std::string& data, const std::string& trigger, const std::string& filter, double target,
         const std::vector<double>& grid, bool block_non_compilable) {
        const auto rs = scored(data, trigger, filter);
        return sweep_json(sweep_joint(rs, target, grid_or_default(grid), HardRules{block_non_compilable})).dump();
      },
      py::arg("data"), py::arg("trigger"), py::arg("filter"), py::arg("target_fnr"),
      py::arg("grid") = std::vector<double>{}, py::arg("block_non_compilable") = false,
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "calibrate",
      [](const std::string& data, const std::string& trigger, const std::string& filter, double target,
         double grid_pct, bool block_non_compilable, const std::string& out) {
        const auto rs = scored(data, trigger, filter);
        const std::vector<double> grid = {grid_pct};
        const auto pt = sweep_joint(rs, target, grid, HardRules{block_non_compilable}).front();
        if (!pt.feasible) fail(ErrorCode::kInfeasible, "grid point exceeds the FNR budget");
        PolicyFile pf{pt.policy, PolicyProvenance{file_sha256_hex(trigger), file_sha256_hex(filter), target, grid_pct,
                                                  pt.realized_fnr}};
        pf.save(out);
        return pf.to_json().dump();
      },
      py::arg("data"), py::arg("trigger"), py::arg("filter"), py::arg("target_fnr"), py::arg("grid_pct"),
      py::arg("block_non_compilable"), py::arg("out"), py::call_guard<py::gil_scoped_release>());

  m.def(
      "replay",
      [](const std::string& data, const std::string& trigger, const std::string& filter, const std::string& policy) {
        const auto d = io::read_valid_dataset(data);
        return replay(d, PolicyFile::load(policy).policy, Scorer::load(trigger, d.schema),
                      Scorer::load(filter, d.schema))
            .to_json()
            .dump();
      },
      py::arg("data"), py::arg("trigger"), py::arg("filter"), py::arg("policy"),
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "curve",
      [](const std::string& calib, const std::string& data, const std::string& trigger, const std::string& filter,
         double target, const std::vector<double>& grid, bool block_non_compilable, const std::string& out) {
        const auto eval = io::read_valid_dataset(data);
        require_replayable(eval);
        const auto pts = sweep_joint(scored(calib, trigger, filter), target, grid_or_default(grid),
                                     HardRules{block_non_compilable});
        const auto c = build_curve(score_dataset(eval, Scorer::load(trigger, eval.schema),
                                                 Scorer::load(filter, eval.schema)),
                                   pts, target);
        if (!out.empty()) export_curve(c, out);
        return curve_to_tsv(c);
      },
      py::arg("calib"), py::arg("data"), py::arg("trigger"), py::arg("filter"), py::arg("target_fnr"),
      py::arg("grid") = std::vector<double>{}, py::arg("block_non_compilable") = false, py::arg("out") = "",
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "plot",
      [](const std::string& curve_tsv, const std::string& out, const std::string& title) {
        plot_curve(parse_curve(curve_tsv), out, title);
      },
      py::arg("curve"), py::arg("out"), py::arg("title") = "");

  m.def(
      "ab",
      [](const std::string& arm_a, const std::string& arm_b, std::vector<std::string> metrics, int resamples,
         std::uint64_t seed, bool pooled) {
        AbOptions opt;
        opt.resamples = resamples;
        opt.seed = seed;
        opt.pooled = pooled;
        if (metrics.empty()) metrics = ab_metric_names();
        const auto a = io::read_valid_dataset(arm_a);
        const auto b = io::read_valid_dataset(arm_b);
        return ab_report_json(ab_compare(a, b, metrics, opt), opt).dump();
      },
      py::arg("arm_a"), py::arg("arm_b"), py::arg("metrics") = std::vector<std::string>{},
      py::arg("resamples") = 2000, py::arg("seed") = 0, py::arg("pooled") = false,
      py::call_guard<py::gil_scoped_release>());

  py::class_<Scorer>(m, "Scorer")
      .def(py::init([](const std::string& path, const std::string& schema) {
             return Scorer::load(path, schema_or_default(schema));
           }),
           py::arg("path"), py::arg("schema") = "")
      .def(
          "score",
          [](const Scorer& s, const std::string& features, std::optional<std::string> context) {
            return s.score(FeatureBag::from_json(Json::parse(features)), context);
          },
          py::arg("features"), py::arg("context") = py::none())
      .def_property_readonly("family", [](const Scorer& s) { return std::string(s.family()); })
      .def_property_readonly("view", [](const Scorer& s) { return std::string(to_string(s.view())); })
      .def_property_readonly("sha256", &Scorer::sha256);

  py::class_<serve::Gate>(m, "Gate")
      .def(py::init([](const std::string& trigger, const std::string& filter, const std::string& policy,
                       const std::string& schema) {
             const auto sc = schema_or_default(schema);
             return std::make_unique<serve::Gate>(Scorer::load(trigger, sc), Scorer::load(filter, sc),
                                                  PolicyFile::load(policy));
           }),
           py::arg("trigger"), py::arg("filter"), py::arg("policy"), py::arg("schema") = "")
      .def("handle_line", &serve::Gate::handle_line, py::arg("line"))
      .def_property_readonly("unknown_features", &serve::Gate::unknown_features);

  py::class_<serve::Server>(m, "Server")
      .def(py::init<const serve::Gate&, std::string, int>(), py::arg("gate"), py::arg("host") = "127.0.0.1",
           py::arg("port") = 0, py::keep_alive<1, 2>())
      .def("start", &serve::Server::start)
      .def("stop", &serve::Server::stop, py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("port", &serve::Server::port);

  m.def(
      "bench",
      [](const std::string& host, int port, std::size_t n, int concurrency, std::uint64_t seed) {
        const auto corpus = serve::bench_corpus(n, seed);
        return serve::bench(host, port, corpus, concurrency).to_json().dump();
      },
      py::arg("host"), py::arg("port"), py::arg("requests") = 1000, py::arg("concurrency") = 8, py::arg("seed") = 0,
      py::call_guard<py::gil_scoped_release>());
}
