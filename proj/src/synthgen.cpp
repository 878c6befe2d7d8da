#include "cgate/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/rng.hpp"

namespace cgate::synth {

namespace {

constexpr std::uint64_t kPilotStream = 0x70110751ULL;
constexpr std::uint64_t kInjectStream = 0x1a7ec7edULL;
constexpr std::int64_t kEpochMs = 1'700'000'000'000LL;
constexpr std::int64_t kDayMs = 86'400'000LL;
constexpr std::int64_t kHourMs = 3'600'000LL;
constexpr double kEmptyRate = 0.01;
constexpr std::size_t kPilotSamples = 20000;

struct Choice {
  const char* name;
  double weight;
  double offset;  // effect term
};

constexpr std::array<Choice, 8> kNodeKinds = {{{"identifier", 0.30, 0.6},
                                               {"call_args", 0.15, 0.3},
                                               {"statement_start", 0.15, 0.2},
                                               {"block_start", 0.10, 0.0},
                                               {"comment", 0.08, -1.0},
                                               {"string_literal", 0.07, -0.8},
                                               {"import", 0.05, 0.4},
                                               {"other", 0.10, -0.3}}};

constexpr std::array<Choice, 6> kLastActions = {{{"typing", 0.55, 0.2},
                                                 {"backspace", 0.12, -0.4},
                                                 {"paste", 0.05, -0.6},
                                                 {"newline", 0.15, 0.3},
                                                 {"navigation", 0.10, -0.2},
                                                 {"undo", 0.03, -0.5}}};

constexpr std::array<const char*, 16> kSyllables = {"ka", "lo", "mi", "tu", "re", "sa",
                                                    "vo", "ni", "pe", "du", "fi", "go",
                                                    "ha", "je", "bu", "zo"};
constexpr std::array<const char*, 6> kSeparators = {" ", ".", "(", ") ", " = ", ", "};

template <std::size_t N>
std::size_t pick(Rng& rng, const std::array<Choice, N>& choices) {
  std::array<double, N> w{};
  for (std::size_t i = 0; i < N; ++i) w[i] = choices[i].weight;
  return rng.categorical(w.data(), N);
}

std::string pool_word(std::uint64_t pool, std::uint64_t index) {
  std::uint64_t h = mix_seed(pool * 7919 + 13, index);
  std::string word;
  for (int i = 0; i < 3; ++i) {
    word += kSyllables[h & 15];
    h >>= 4;
  }
  return word;
}

std::string extension_for(Rng& rng, const std::string& language) {
  if (language == "kotlin") return rng.bernoulli(0.9) ? "kt" : "kts";
  if (language == "python") return "py";
  if (language == "php") return "php";
  if (language == "csharp") return "cs";
  if (language == "java") return "java";
  return {};
}

std::string hour_bucket(std::int64_t ts) {
  const auto hour = (ts / kHourMs) % 24;
  if (hour < 6) return "night";
  if (hour < 12) return "morning";
  if (hour < 18) return "afternoon";
  return "evening";
}

struct UserState {
  std::string id;
  const BehaviorProfile* profile = nullptr;
  std::string language;
  double speed_mean = 0.0;
  double intercept = 0.0;
  double accept_bias = 0.0;  // calibrated per profile
};

struct SessionState {
  std::int64_t accepts = 0;
  std::int64_t cancels = 0;
  std::optional<bool> prev_accepted;
  std::optional<std::int64_t> last_completion_ts;
};

// One sampled completion opportunity and its counterfactual generation.
struct Draw {
  FeatureBag trigger;
  FeatureBag filter;  // full bag
  std::string context;
  std::uint32_t length = 0;
  bool compilable = true;
  double accept_eta = 0.0;  // feature effects, excluding intercepts
  double shown_eta = 0.0;
};

double weight_of(const BehaviorProfile& p, const char* name) {
  auto it = p.feature_effect_weights.find(name);
  return it == p.feature_effect_weights.end() ? 0.0 : it->second;
}

double log_term(double x, double center, double spread) {
  return (std::log(std::max(x, 1e-9)) - std::log(center)) / spread;
}

// Trigger-time features. Effect terms read only observed values.
void sample_trigger(Rng& rng, const UserState& user, const SessionState& session,
                    std::int64_t ts, Draw& d) {
  const BehaviorProfile& p = *user.profile;
  auto& bag = d.trigger;

  const double speed = std::max(0.2, user.speed_mean * rng.lognormal(0.0, 0.25));
  bag.set_scalar("typing_speed", speed);
  d.accept_eta += weight_of(p, "typing_speed") * (speed - p.typing_speed_mean) /
                  std::max(p.typing_speed_std, 0.5);
  d.shown_eta += -0.3 * (speed - p.typing_speed_mean) / std::max(p.typing_speed_std, 0.5);

  const double pause = rng.lognormal(std::log(250.0), 0.9);
  const bool pause_missing = rng.bernoulli(0.01);
  bag.set_scalar("ms_since_last_keystroke", pause_missing ? std::nullopt : std::optional(pause));
  if (!pause_missing) d.accept_eta += weight_of(p, "ms_since_last_keystroke") * log_term(pause, 250, 0.9);

  const double prefix = std::round(rng.lognormal(std::log(40.0), 0.6));
  bag.set_scalar("prefix_length", prefix);
  d.accept_eta += weight_of(p, "prefix_length") * log_term(prefix + 1, 41, 0.6);

  const double doc_lines = std::max(1.0, std::round(rng.lognormal(std::log(200.0), 0.8)));
  const double caret_line = 1.0 + std::floor(rng.uniform() * doc_lines);
  const double indent = rng.poisson(2.0);
  const double line_length = indent * 4 + std::round(rng.lognormal(std::log(30.0), 0.5));
  const bool line_end = rng.bernoulli(0.6);
  const double after = line_end ? 0.0 : std::floor(rng.uniform() * (line_length - indent * 4));
  bag.set_scalar("caret_line", caret_line);
  bag.set_scalar("caret_column", line_length - after);
  bag.set_scalar("line_length", line_length);
  bag.set_scalar("indent_level", indent);
  bag.set_scalar("chars_after_caret", after);
  bag.set_scalar("document_lines", doc_lines);
  bag.set_flag("at_line_end", line_end);
  d.accept_eta += weight_of(p, "at_line_end") * (line_end ? 1.0 : 0.0);
  d.accept_eta += weight_of(p, "indent_level") * (indent - 2.0) / 1.4;

  const auto& node = kNodeKinds[pick(rng, kNodeKinds)];
  bag.set_categorical("node_kind", std::string(node.name));
  d.accept_eta += weight_of(p, "node_kind") * node.offset;
  const bool in_comment = std::string_view(node.name) == "comment" || rng.bernoulli(0.02);
  const bool in_string = std::string_view(node.name) == "string_literal" || rng.bernoulli(0.02);
  bag.set_flag("in_comment", in_comment);
  bag.set_flag("in_string", in_string);
  d.accept_eta += weight_of(p, "in_comment") * (in_comment ? 1.0 : 0.0);
  d.accept_eta += weight_of(p, "in_string") * (in_string ? 1.0 : 0.0);

  const auto& action = kLastActions[pick(rng, kLastActions)];
  bag.set_categorical("last_action", std::string(action.name));
  d.accept_eta += weight_of(p, "last_action") * action.offset;

  bag.set_scalar("session_accept_count", static_cast<double>(session.accepts));
  bag.set_scalar("session_cancel_count", static_cast<double>(session.cancels));
  const std::string ext = extension_for(rng, user.language);
  bag.set_categorical("file_extension", ext.empty() ? std::nullopt : std::optional(ext));
  bag.set_categorical("hour_bucket", hour_bucket(ts));
  bag.set_flag("prev_completion_accepted", session.prev_accepted);
  bag.set_scalar("ms_since_last_completion",
                 session.last_completion_ts
                     ? std::optional(static_cast<double>(ts - *session.last_completion_ts))
                     : std::nullopt);
}

void sample_context(Rng& rng, double& latent, Draw& d) {
  latent = rng.normal();
  const double p_pos = sigmoid(1.5 * latent);
  const auto n = 24 + rng.below(16);
  std::string text;
  for (std::uint64_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const double side = rng.uniform();
    const auto index = rng.below(u < 0.6 ? 40 : 200);
    const std::uint64_t pool = u < 0.6 ? (side < p_pos ? 1 : 2) : 3;
    if (i > 0) text += kSeparators[rng.below(kSeparators.size())];
    text += pool_word(pool, index);
  }
  d.context = std::move(text);
}

void sample_filter(Rng& rng, const BehaviorProfile& p, Draw& d) {
  d.filter = d.trigger;
  auto& bag = d.filter;
  const bool empty = rng.bernoulli(kEmptyRate);
  const double raw_length = 1.0 + std::floor(rng.lognormal(std::log(25.0), 0.8));
  d.length = empty ? 0u : static_cast<std::uint32_t>(std::min(raw_length, 4000.0));

  const double latency = rng.lognormal(std::log(220.0), 0.4);
  const bool latency_missing = rng.bernoulli(0.02);
  bag.set_scalar("generation_latency_ms", latency_missing ? std::nullopt : std::optional(latency));
  d.shown_eta += -0.6 * log_term(latency, 220, 0.4);
  if (!latency_missing) d.accept_eta += weight_of(p, "generation_latency_ms") * log_term(latency, 220, 0.4);

  const double mean_lp = std::min(-0.01, rng.normal(-0.6, 0.25));
  const double min_lp = mean_lp * (2.0 + rng.exponential(1.0));
  bag.set_scalar("mean_logprob", mean_lp);
  bag.set_scalar("min_logprob", min_lp);
  d.accept_eta += weight_of(p, "mean_logprob") * (mean_lp + 0.6) / 0.25;
  d.accept_eta += weight_of(p, "min_logprob") * log_term(-min_lp, 1.8, 0.4);

  bag.set_scalar("context_tokens", std::round(rng.lognormal(std::log(600.0), 0.5)));
  bag.set_scalar("completion_lines", d.length == 0 ? 0.0 : 1.0 + std::floor(d.length / 40.0));
  bag.set_scalar("completion_length", static_cast<double>(d.length));
  if (d.length > 0) d.accept_eta += weight_of(p, "completion_length") * log_term(d.length, 25, 0.8);

  d.compilable = rng.bernoulli(0.9);
  bag.set_flag("compilable", d.compilable);
  d.accept_eta += weight_of(p, "compilable") * (d.compilable ? 0.0 : -1.0);
}

double bisect_bias(const std::vector<double>& eta, const std::vector<double>& weight,
                   double target) {
  double lo = -30.0, hi = 30.0;
  double total_weight = 0.0;
  for (double w : weight) total_weight += w;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (std::size_t i = 0; i < eta.size(); ++i) mean += weight[i] * sigmoid(mid + eta[i]);
    mean /= total_weight;
    (mean < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Calibration {
  double shown_bias = 0.0;
  std::vector<double> accept_bias;  // per profile
};

// Solve the intercepts so population-level show and accept-per-show rates
// match the configuration, using a pilot sample from a dedicated stream.
Calibration calibrate(const WorldConfig& config) {
  Calibration out;
  std::vector<double> shown_eta;
  std::vector<std::vector<double>> accept_eta(config.profiles.size());
  for (std::size_t k = 0; k < config.profiles.size(); ++k) {
    const BehaviorProfile& p = config.profiles[k].first;
    Rng rng = Rng::derive(config.seed ^ kPilotStream, k);
    for (std::size_t i = 0; i < kPilotSamples; ++i) {
      UserState user;
      user.profile = &p;
      user.language = "kotlin";
      user.speed_mean = std::max(0.5, rng.normal(p.typing_speed_mean, p.typing_speed_std));
      user.intercept = rng.normal(0.0, p.user_effect_std);
      Draw d;
      SessionState session;
      sample_trigger(rng, user, session, kEpochMs, d);
      sample_filter(rng, p, d);
      double latent = rng.normal();
      d.accept_eta += user.intercept + p.context_signal_strength * latent;
      if (d.length == 0) continue;
      shown_eta.push_back(d.shown_eta);
      accept_eta[k].push_back(d.accept_eta);
    }
  }
  const std::vector<double> ones(shown_eta.size(), 1.0);
  out.shown_bias = bisect_bias(shown_eta, ones, config.show_rate / (1.0 - kEmptyRate));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < config.profiles.size(); ++k) {
    std::vector<double> w;
    w.reserve(accept_eta[k].size());
    for (std::size_t i = 0; i < accept_eta[k].size(); ++i) {
      w.push_back(sigmoid(out.shown_bias + shown_eta[offset + i]));
    }
    offset += accept_eta[k].size();
    out.accept_bias.push_back(
        bisect_bias(accept_eta[k], w, config.profiles[k].first.base_accept_rate));
  }
  return out;
}

struct Resolved {
  Outcome outcome = Outcome::kNotShown;
  double p_shown = 0.0;
  double p_accept = 0.0;
};

Resolved resolve_outcome(Rng& rng, const UserState& user, const Calibration& cal, double latent,
                         Draw& d) {
  const BehaviorProfile& p = *user.profile;
  const double accept_logit = user.accept_bias + user.intercept + d.accept_eta +
                              p.context_signal_strength * latent;
  Resolved r;
  r.p_shown = d.length == 0 ? 0.0 : sigmoid(cal.shown_bias + d.shown_eta);
  r.p_accept = sigmoid(accept_logit);
  const double p_cancel =
      sigmoid(logit(p.cancel_propensity) - 0.8 * (accept_logit - user.accept_bias));
  const double u_shown = rng.uniform();
  const double u_accept = rng.uniform();
  const double u_cancel = rng.uniform();
  if (u_shown < r.p_shown) {
    if (u_accept < r.p_accept) {
      r.outcome = Outcome::kAccepted;
    } else {
      r.outcome = u_cancel < p_cancel ? Outcome::kExplicitCancel : Outcome::kIgnored;
    }
  }
  return r;
}

struct Simulation {
  GeneratedWorld world;
  ClosedLoopStats stats;
};

Simulation simulate(const WorldConfig& config, const ThresholdPolicy* policy,
                    const TriggerScorer* scorer) {
  config.validate();
  const Calibration cal = calibrate(config);
  Simulation sim;
  Dataset& data = sim.world.dataset;
  data.schema = default_schema();
  auto& stats = sim.stats;

  std::vector<double> mix;
  for (const auto& [_, w] : config.profiles) mix.push_back(w);
  std::vector<double> lang_weights;
  for (const auto& l : config.languages) lang_weights.push_back(l.weight);

  for (std::int64_t u = 0; u < config.user_count; ++u) {
    Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(u));
    UserState user;
    user.id = fmt::format("u{:05d}", u);
    const std::size_t k = rng.categorical(mix.data(), mix.size());
    user.profile = &config.profiles[k].first;
    user.accept_bias = cal.accept_bias[k];
    user.language = config.languages[rng.categorical(lang_weights.data(), lang_weights.size())].name;
    user.speed_mean = std::max(0.5, rng.normal(user.profile->typing_speed_mean,
                                               user.profile->typing_speed_std));
    user.intercept = rng.normal(0.0, user.profile->user_effect_std);
    const auto sessions = 1 + rng.poisson(std::max(0.0, config.sessions_per_user - 1.0));
    const std::int64_t user_offset = static_cast<std::int64_t>(rng.below(kDayMs / 2));
    std::int64_t seq = 0;
    std::int64_t& user_generations = stats.generations_per_user[user.id];

    for (std::uint32_t s = 0; s < sessions; ++s) {
      const std::string session_id = fmt::format("{}-s{:03d}", user.id, s);
      const auto length = 1 + rng.poisson(std::max(0.0, user.profile->session_length_mean - 1.0));
      std::int64_t ts = kEpochMs + user_offset + static_cast<std::int64_t>(s) * (kDayMs + kDayMs / 3) +
                        (8 + static_cast<std::int64_t>(rng.below(12))) * kHourMs;
      std::int64_t shift = 0;
      SessionState session;

      for (std::uint32_t i = 0; i < length; ++i) {
        ts += 200 + static_cast<std::int64_t>(rng.exponential(15000.0));
        Draw d;
        sample_trigger(rng, user, session, ts, d);
        double latent = 0.0;
        sample_context(rng, latent, d);
        sample_filter(rng, *user.profile, d);
        const Resolved r = resolve_outcome(rng, user, cal, latent, d);
        const auto typed = static_cast<std::int64_t>(5 + rng.poisson(10.0));

        CompletionEvent event;
        event.event_id = fmt::format("{}-e{:05d}", user.id, seq++);
        event.user_id = user.id;
        event.session_id = session_id;
        event.timestamp_ms = ts + shift;
        event.language = user.language;
        event.trigger_features = d.trigger;
        event.context = d.context;

        GenerationRecord gen;
        gen.event_id = event.event_id;
        gen.completion_length = d.length;
        gen.filter_features = d.filter;
        gen.compilable = d.compilable;
        gen.outcome = r.outcome;

        GroundTruth truth{event.event_id, r.p_shown * r.p_accept, r.p_shown, r.p_accept};
        const bool accepted = r.outcome == Outcome::kAccepted;
        stats.original_events += 1;
        stats.typed_symbols += typed + (accepted ? d.length : 0);

        const bool blocked = policy && scorer && !policy->trigger_passes((*scorer)(event));
        const std::string parent_id = event.event_id;
        const std::int64_t parent_ts = event.timestamp_ms;
        data.events.push_back(std::move(event));
        sim.world.ground_truth.push_back(truth);
        if (!blocked) {
          stats.generations += 1;
          user_generations += 1;
          if (accepted) stats.accepted_symbols += d.length;
          data.generations.push_back(std::move(gen));
        } else {
          stats.blocked += 1;
          Rng inject = Rng::derive(mix_seed(config.seed, kInjectStream), fnv1a64(parent_id));
          const auto retries = inject.poisson(config.dependence.opportunity_boost);
          std::uint32_t retry_length = d.length;
          std::int64_t cursor = parent_ts;
          for (std::uint32_t rk = 1; rk <= retries; ++rk) {
            const auto gap = 300 + static_cast<std::int64_t>(inject.exponential(1500.0));
            cursor += gap;
            shift += gap;
            Draw rd;
            sample_trigger(inject, user, session, cursor, rd);
            if (retry_length > 0) {
              retry_length = std::max<std::uint32_t>(
                  1, static_cast<std::uint32_t>(retry_length * (0.3 + 0.7 * inject.uniform())));
            }
            CompletionEvent retry;
            retry.event_id = fmt::format("{}-r{}", parent_id, rk);
            retry.user_id = user.id;
            retry.session_id = session_id;
            retry.timestamp_ms = cursor;
            retry.language = user.language;
            retry.trigger_features = rd.trigger;
            retry.context = d.context;
            stats.injected_events += 1;
            const bool pass = policy->trigger_passes((*scorer)(retry));
            GroundTruth retry_truth = truth;
            retry_truth.event_id = retry.event_id;
            sim.world.ground_truth.push_back(retry_truth);
            if (pass) {
              GenerationRecord rg = gen;
              rg.event_id = retry.event_id;
              rg.completion_length = retry_length;
              for (const auto& [name, value] : rd.trigger.scalars) rg.filter_features.set_scalar(name, value);
              for (const auto& [name, value] : rd.trigger.categoricals) rg.filter_features.set_categorical(name, value);
              for (const auto& [name, value] : rd.trigger.flags) rg.filter_features.set_flag(name, value);
              rg.filter_features.set_scalar("completion_length", static_cast<double>(retry_length));
              data.generations.push_back(std::move(rg));
              stats.generations += 1;
              user_generations += 1;
              if (accepted) stats.accepted_symbols += retry_length;
            }
            data.events.push_back(std::move(retry));
            if (pass) break;
          }
        }

        // Session history follows the underlying opportunity stream.
        if (is_shown(r.outcome)) {
          session.accepts += accepted ? 1 : 0;
          session.cancels += r.outcome == Outcome::kExplicitCancel ? 1 : 0;
          session.prev_accepted = accepted;
        }
        if (d.length > 0) session.last_completion_ts = ts;
      }
    }
  }
  stats.rocc = stats.typed_symbols > 0 ? static_cast<double>(stats.accepted_symbols) /
                                              static_cast<double>(stats.typed_symbols)
                                        : 0.0;
  data.manifest = dataset_stats(data.events, data.generations, data.schema);
  data.manifest.gated = policy != nullptr;
  return sim;
}

}  // namespace

std::map<std::string, double> BehaviorProfile::default_effect_weights() {
  return {{"typing_speed", -0.3},  {"ms_since_last_keystroke", 0.35},
          {"prefix_length", 0.15}, {"node_kind", 0.8},
          {"last_action", 0.6},    {"in_comment", -0.3},
          {"in_string", -0.2},     {"at_line_end", 0.4},
          {"mean_logprob", 0.9},   {"min_logprob", -0.25},
          {"completion_length", -0.3}, {"compilable", 1.2}};
}

void WorldConfig::validate() const {
  if (user_count <= 0) fail(ErrorCode::kConfig, "user_count must be positive");
  if (profiles.empty()) fail(ErrorCode::kConfig, "at least one behavior profile required");
  if (languages.empty()) fail(ErrorCode::kConfig, "at least one language required");
  if (!(show_rate > 0.0 && show_rate < 1.0)) fail(ErrorCode::kConfig, "show_rate must lie in (0,1)");
  if (sessions_per_user < 1.0) fail(ErrorCode::kConfig, "sessions_per_user must be >= 1");
  double total = 0.0;
  for (const auto& [p, w] : profiles) {
    if (w < 0.0) fail(ErrorCode::kConfig, "negative mix weight");
    total += w;
    if (!(p.base_accept_rate > 0.0 && p.base_accept_rate < 1.0) ||
        !(p.cancel_propensity > 0.0 && p.cancel_propensity < 1.0)) {
      fail(ErrorCode::kConfig, "profile probabilities must lie in (0,1)");
    }
    if (p.typing_speed_std < 0.0 || p.user_effect_std < 0.0) {
      fail(ErrorCode::kConfig, "standard deviations must be non-negative");
    }
    if (p.typing_speed_mean <= 0.0 || p.session_length_mean < 1.0) {
      fail(ErrorCode::kConfig, "typing_speed_mean must be positive, session_length_mean >= 1");
    }
    if (p.context_signal_strength < 0.0) fail(ErrorCode::kConfig, "context_signal_strength < 0");
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::kConfig, "profile mix weights must sum to 1");
  for (const auto& l : languages) {
    if (l.weight < 0.0) fail(ErrorCode::kConfig, "negative language weight");
  }
  if (dependence.opportunity_boost < 0.0) fail(ErrorCode::kConfig, "opportunity_boost < 0");
}

Json WorldConfig::to_json() const {
  Json profiles_json = Json::array();
  for (const auto& [p, w] : profiles) {
    profiles_json.push_back({{"weight", w},
                             {"base_accept_rate", p.base_accept_rate},
                             {"cancel_propensity", p.cancel_propensity},
                             {"typing_speed_mean", p.typing_speed_mean},
                             {"typing_speed_std", p.typing_speed_std},
                             {"session_length_mean", p.session_length_mean},
                             {"feature_effect_weights", p.feature_effect_weights},
                             {"context_signal_strength", p.context_signal_strength},
                             {"user_effect_std", p.user_effect_std}});
  }
  Json langs = Json::array();
  for (const auto& l : languages) langs.push_back({{"name", l.name}, {"weight", l.weight}});
  return {{"user_count", user_count},
          {"sessions_per_user", sessions_per_user},
          {"show_rate", show_rate},
          {"profiles", std::move(profiles_json)},
          {"languages", std::move(langs)},
          {"dependence",
           {{"enabled", dependence.enabled}, {"opportunity_boost", dependence.opportunity_boost}}},
          {"seed", seed}};
}

WorldConfig WorldConfig::from_json(const Json& doc) {
  try {
    const WorldConfig defaults = default_world();
    WorldConfig c;
    c.user_count = doc.value("user_count", defaults.user_count);
    c.sessions_per_user = doc.value("sessions_per_user", defaults.sessions_per_user);
    c.show_rate = doc.value("show_rate", defaults.show_rate);
    c.seed = doc.value("seed", defaults.seed);
    if (auto it = doc.find("profiles"); it != doc.end()) {
      for (const auto& pj : *it) {
        BehaviorProfile p;
        p.base_accept_rate = pj.value("base_accept_rate", p.base_accept_rate);
        p.cancel_propensity = pj.value("cancel_propensity", p.cancel_propensity);
        p.typing_speed_mean = pj.value("typing_speed_mean", p.typing_speed_mean);
        p.typing_speed_std = pj.value("typing_speed_std", p.typing_speed_std);
        p.session_length_mean = pj.value("session_length_mean", p.session_length_mean);
        p.feature_effect_weights = pj.value("feature_effect_weights",
                                            BehaviorProfile::default_effect_weights());
        p.context_signal_strength = pj.value("context_signal_strength", p.context_signal_strength);
        p.user_effect_std = pj.value("user_effect_std", p.user_effect_std);
        c.profiles.emplace_back(std::move(p), pj.value("weight", 1.0));
      }
    } else {
      c.profiles = defaults.profiles;
    }
    if (auto it = doc.find("languages"); it != doc.end()) {
      for (const auto& lj : *it) {
        c.languages.push_back({lj.at("name").get<std::string>(), lj.value("weight", 1.0)});
      }
    } else {
      c.languages = defaults.languages;
    }
    if (auto it = doc.find("dependence"); it != doc.end()) {
      c.dependence.enabled = it->value("enabled", false);
      c.dependence.opportunity_boost = it->value("opportunity_boost", c.dependence.opportunity_boost);
    }
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed world config: ") + e.what());
  }
}

WorldConfig default_world() {
  WorldConfig c;
  BehaviorProfile steady;
  steady.base_accept_rate = 0.31;
  steady.feature_effect_weights = BehaviorProfile::default_effect_weights();
  c.profiles = {{steady, 1.0}};
  c.languages = {{"kotlin", 0.35}, {"python", 0.25}, {"php", 0.15}, {"csharp", 0.15}, {"java", 0.10}};
  return c;
}

Json GroundTruth::to_json() const {
  return {{"event_id", event_id},
          {"accept_probability", accept_probability},
          {"shown_probability", shown_probability},
          {"accept_given_shown", accept_given_shown}};
}

GroundTruth GroundTruth::from_json(const Json& doc) {
  return {doc.at("event_id").get<std::string>(), doc.at("accept_probability").get<double>(),
          doc.at("shown_probability").get<double>(), doc.at("accept_given_shown").get<double>()};
}

Json ClosedLoopStats::to_json() const {
  return {{"original_events", original_events}, {"injected_events", injected_events},
          {"blocked", blocked},                 {"generations", generations},
          {"accepted_symbols", accepted_symbols}, {"typed_symbols", typed_symbols},
          {"rocc", rocc}};
}

GeneratedWorld generate(const WorldConfig& config) {
  return std::move(simulate(config, nullptr, nullptr).world);
}

ClosedLoopStats open_loop_stats(const WorldConfig& config) {
  return simulate(config, nullptr, nullptr).stats;
}

ClosedLoopWorld generate_closed_loop(const WorldConfig& config, const ThresholdPolicy& policy,
                                     const TriggerScorer& scorer) {
  if (!config.dependence.enabled) {
    fail(ErrorCode::kConfig, "dependence disabled: use generate");
  }
  if (!scorer) fail(ErrorCode::kConfig, "closed loop requires a trigger scorer");
  auto sim = simulate(config, &policy, &scorer);
  return {std::move(sim.world), std::move(sim.stats)};
}

void write_world(const std::filesystem::path& dir, const GeneratedWorld& world) {
  io::write_dataset(dir, world.dataset);
  std::string text;
  for (const auto& g : world.ground_truth) {
    text += g.to_json().dump();
    text += '\n';
  }
  write_file(dir / io::kGroundTruthFile, text);
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  std::vector<GroundTruth> out;
  for (const auto& line : read_lines(path)) {
    try {
      out.push_back(GroundTruth::from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      fail(ErrorCode::kParse, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace cgate::synth
