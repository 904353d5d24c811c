#pragma once

// Command-line front end: prove, sketch, filter, prep, eval, check.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hybridprover/checker.hpp"
#include "hybridprover/dataprep.hpp"
#include "hybridprover/eval.hpp"
#include "hybridprover/filter.hpp"
#include "hybridprover/isabelle.hpp"
#include "hybridprover/model.hpp"
#include "hybridprover/orchestrator.hpp"
#include "hybridprover/sketch.hpp"
#include "hybridprover/syntax.hpp"
#include "json.hpp"

namespace hybridprover::cli {

enum ExitCode : int { kOk = 0, kUnsolved = 1, kUsage = 2, kBackendFailure = 3 };

using ordered_json = nlohmann::ordered_json;

struct RunConfig {
  orchestrator::PipelineConfig pipeline;
  model::BackendConfig whole_backend;
  model::BackendConfig step_backend;
  bool step_backend_set = false;  // otherwise derived from whole_backend
  dataprep::PrepConfig prep;
  std::string checker_kind = "mock";
  std::string oracle_path;
  isabelle::IsabelleConfig isabelle;
  bool imports_set = false;
  std::size_t jobs = 1;
  bool unbiased = false;
};

// ---------------------------------------------------------------------------
// Config file

namespace detail {

struct ConfigError {
  std::string detail;
};

inline Result<model::BackendKind, ConfigError> backend_kind(const std::string& s) {
  if (s == "scripted") return model::BackendKind::Scripted;
  if (s == "http") return model::BackendKind::HttpChat;
  return unexpected(ConfigError{"backend must be scripted or http, got " + s});
}

inline std::string backend_kind_name(model::BackendKind k) { return k == model::BackendKind::HttpChat ? "http" : "scripted"; }

inline Result<bool, ConfigError> check_keys(const nlohmann::json& j, const std::string& section,
                                            std::initializer_list<const char*> allowed) {
  if (!j.is_object()) return unexpected(ConfigError{section + " must be an object"});
  for (const auto& [k, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      return unexpected(ConfigError{"unknown key " + section + "." + k});
  return true;
}

template <class T>
void get(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline Result<bool, ConfigError> apply_backend(const nlohmann::json& j, const std::string& section,
                                               model::BackendConfig& b) {
  if (auto ok = check_keys(j, section,
                           {"kind", "endpoint", "model", "api_key_env", "request_timeout", "max_in_flight", "script"});
      !ok)
    return ok;
  if (j.contains("kind")) {
    auto k = backend_kind(j["kind"].get<std::string>());
    if (!k) return unexpected(k.error());
    b.kind = *k;
  }
  get(j, "endpoint", b.endpoint);
  get(j, "model", b.model_name);
  get(j, "api_key_env", b.api_key_env);
  get(j, "request_timeout", b.request_timeout);
  get(j, "max_in_flight", b.max_in_flight);
  get(j, "script", b.script_path);
  return true;
}

}  // namespace detail

/// Applies a config document on top of `c`. Unknown keys are errors.
inline Result<bool, detail::ConfigError> apply_config(const nlohmann::json& j, RunConfig& c) {
  using detail::get;
  try {
    if (auto ok = detail::check_keys(j, "config", {"pipeline", "backend", "step_backend", "checker", "prep", "eval"}); !ok)
      return ok;
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      if (auto ok = detail::check_keys(p, "pipeline",
                                       {"n", "temperature", "max_tokens", "seed", "step_n", "step_temperature",
                                        "step_max_tokens", "workers", "timeout", "hammer_timeout", "refine_budget",
                                        "sketch_limit", "dedup", "use_hammer", "use_heuristics", "use_step_model",
                                        "refine", "hammer_max_suggestions", "filter_mode"});
          !ok)
        return ok;
      auto& pc = c.pipeline;
      get(p, "n", pc.whole_sampling.n);
      get(p, "temperature", pc.whole_sampling.temperature);
      get(p, "max_tokens", pc.whole_sampling.max_tokens);
      if (p.contains("seed")) {
        pc.whole_sampling.seed = p["seed"].get<std::uint64_t>();
        pc.step_sampling.seed = pc.whole_sampling.seed;
      }
      get(p, "step_n", pc.step_sampling.n);
      get(p, "step_temperature", pc.step_sampling.temperature);
      get(p, "step_max_tokens", pc.step_sampling.max_tokens);
      get(p, "workers", pc.workers);
      get(p, "timeout", pc.check_timeout);
      get(p, "hammer_timeout", pc.hammer_timeout);
      get(p, "refine_budget", pc.refine_budget);
      get(p, "sketch_limit", pc.sketch_limit);
      get(p, "dedup", pc.dedup);
      get(p, "use_hammer", pc.use_hammer);
      get(p, "use_heuristics", pc.use_heuristics);
      get(p, "use_step_model", pc.use_step_model);
      get(p, "refine", pc.refine);
      get(p, "hammer_max_suggestions", pc.hammer_max_suggestions);
      if (p.contains("filter_mode")) {
        const auto m = p["filter_mode"].get<std::string>();
        if (m != "strict" && m != "lenient") return unexpected(detail::ConfigError{"filter_mode must be strict or lenient"});
        pc.filter.mode = m == "strict" ? filter::EnvelopeMode::Strict : filter::EnvelopeMode::Lenient;
      }
    }
    if (j.contains("backend"))
      if (auto ok = detail::apply_backend(j["backend"], "backend", c.whole_backend); !ok) return ok;
    if (j.contains("step_backend")) {
      if (auto ok = detail::apply_backend(j["step_backend"], "step_backend", c.step_backend); !ok) return ok;
      c.step_backend_set = true;
    }
    if (j.contains("checker")) {
      const auto& k = j["checker"];
      if (auto ok = detail::check_keys(k, "checker",
                                       {"kind", "oracle", "server", "password", "session", "session_dirs", "work_dir",
                                        "imports", "theory_name"});
          !ok)
        return ok;
      get(k, "kind", c.checker_kind);
      get(k, "oracle", c.oracle_path);
      if (k.contains("server")) {
        const auto s = k["server"].get<std::string>();
        if (auto info = isabelle::parse_server_info(s)) {
          c.isabelle.host = info->host;
          c.isabelle.port = info->port;
          c.isabelle.password = info->password;
        } else {
          const auto colon = s.rfind(':');
          if (colon == std::string::npos) return unexpected(detail::ConfigError{"checker.server must be host:port"});
          c.isabelle.host = s.substr(0, colon);
          c.isabelle.port = std::stoi(s.substr(colon + 1));
        }
      }
      get(k, "password", c.isabelle.password);
      get(k, "session", c.isabelle.session);
      c.pipeline.wrapper.session = c.isabelle.session;
      get(k, "session_dirs", c.isabelle.session_dirs);
      get(k, "work_dir", c.isabelle.work_dir);
      if (k.contains("imports")) {
        get(k, "imports", c.pipeline.wrapper.imports);
        c.imports_set = true;
      }
      get(k, "theory_name", c.pipeline.wrapper.theory_name);
    }
    if (j.contains("prep")) {
      const auto& p = j["prep"];
      if (auto ok = detail::check_keys(p, "prep",
                                       {"apply_min", "apply_max", "isar_min", "isar_max", "emit_labels", "symbol_rewrites"});
          !ok)
        return ok;
      get(p, "apply_min", c.prep.apply_min);
      get(p, "apply_max", c.prep.apply_max);
      get(p, "isar_min", c.prep.isar_min);
      get(p, "isar_max", c.prep.isar_max);
      get(p, "emit_labels", c.prep.emit_labels);
      get(p, "symbol_rewrites", c.prep.symbol_rewrites);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      if (auto ok = detail::check_keys(e, "eval", {"jobs", "unbiased"}); !ok) return ok;
      get(e, "jobs", c.jobs);
      get(e, "unbiased", c.unbiased);
    }
  } catch (const nlohmann::json::exception& e) {
    return unexpected(detail::ConfigError{std::string("bad config value: ") + e.what()});
  } catch (const std::exception& e) {
    return unexpected(detail::ConfigError{std::string("bad config value: ") + e.what()});
  }
  return true;
}

inline ordered_json backend_json(const model::BackendConfig& b) {
  return {{"kind", detail::backend_kind_name(b.kind)}, {"endpoint", b.endpoint},           {"model", b.model_name},
          {"api_key_env", b.api_key_env},             {"request_timeout", b.request_timeout}, {"max_in_flight", b.max_in_flight},
          {"script", b.script_path}};
}

/// The fully resolved configuration, in the config file's own layout. The
/// server password is never echoed.
inline ordered_json config_json(const RunConfig& c) {
  const auto& p = c.pipeline;
  ordered_json pj = {
      {"n", p.whole_sampling.n},
      {"temperature", p.whole_sampling.temperature},
      {"max_tokens", p.whole_sampling.max_tokens},
      {"step_n", p.step_sampling.n},
      {"step_temperature", p.step_sampling.temperature},
      {"step_max_tokens", p.step_sampling.max_tokens},
      {"workers", p.workers},
      {"timeout", p.check_timeout},
      {"hammer_timeout", p.hammer_timeout},
      {"refine_budget", p.refine_budget},
      {"sketch_limit", p.sketch_limit},
      {"dedup", p.dedup},
      {"use_hammer", p.use_hammer},
      {"use_heuristics", p.use_heuristics},
      {"use_step_model", p.use_step_model},
      {"refine", p.refine},
      {"hammer_max_suggestions", p.hammer_max_suggestions},
      {"filter_mode", p.filter.mode == filter::EnvelopeMode::Strict ? "strict" : "lenient"},
  };
  if (p.whole_sampling.seed) pj["seed"] = *p.whole_sampling.seed;
  ordered_json out;
  out["pipeline"] = pj;
  out["backend"] = backend_json(c.whole_backend);
  if (c.step_backend_set) out["step_backend"] = backend_json(c.step_backend);
  out["checker"] = {{"kind", c.checker_kind},
                    {"oracle", c.oracle_path},
                    {"server", c.isabelle.host + ":" + std::to_string(c.isabelle.port)},
                    {"session", c.isabelle.session},
                    {"session_dirs", c.isabelle.session_dirs},
                    {"work_dir", c.isabelle.work_dir},
                    {"imports", p.wrapper.imports},
                    {"theory_name", p.wrapper.theory_name}};
  out["prep"] = {{"apply_min", c.prep.apply_min},   {"apply_max", c.prep.apply_max},
                 {"isar_min", c.prep.isar_min},     {"isar_max", c.prep.isar_max},
                 {"emit_labels", c.prep.emit_labels}, {"symbol_rewrites", c.prep.symbol_rewrites}};
  out["eval"] = {{"jobs", c.jobs}, {"unbiased", c.unbiased}};
  return out;
}

// ---------------------------------------------------------------------------
// Flag overrides

struct Overrides {
  std::string config_path;
  std::optional<std::size_t> n, workers, refine_budget, step_n, jobs;
  std::optional<double> temperature, timeout;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend, endpoint, model, api_key_env, script, step_script, checker, oracle, server,
      password, session, work_dir;
  std::vector<std::string> imports;
  bool no_hammer = false;
  bool no_step_model = false;
  bool no_refine = false;
};

inline void add_pipeline_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--n", o.n, "whole-proof samples per theorem");
  app->add_option("--temperature", o.temperature, "sampling temperature");
  app->add_option("--timeout", o.timeout, "checker timeout in seconds");
  app->add_option("--workers", o.workers, "concurrent checks");
  app->add_option("--refine-budget", o.refine_budget, "full-proof checks per sketch during refinement");
  app->add_option("--step-n", o.step_n, "step-model samples per subgoal");
  app->add_option("--backend", o.backend, "model backend")->check(CLI::IsMember({"scripted", "http"}));
  app->add_option("--endpoint", o.endpoint, "chat completions URL");
  app->add_option("--model", o.model, "model name");
  app->add_option("--api-key-env", o.api_key_env, "environment variable holding the API key");
  app->add_option("--script", o.script, "scripted whole-proof responses (JSONL)");
  app->add_option("--step-script", o.step_script, "scripted step-model responses (JSONL)");
  app->add_option("--seed", o.seed, "sampling seed");
  app->add_flag("--no-hammer", o.no_hammer, "skip sledgehammer probes");
  app->add_flag("--no-step-model", o.no_step_model, "skip the step model");
  app->add_flag("--no-refine", o.no_refine, "stop after sketch validation");
}

inline void add_checker_flags(CLI::App* app, Overrides& o) {
  app->add_option("--checker", o.checker, "proof checker")->check(CLI::IsMember({"isabelle", "mock"}));
  app->add_option("--oracle", o.oracle, "mock checker rules (JSON)");
  app->add_option("--server", o.server, "Isabelle server host:port or its startup line");
  app->add_option("--password", o.password, "Isabelle server password");
  app->add_option("--session", o.session, "Isabelle session (logic)");
  app->add_option("--work-dir", o.work_dir, "directory for theory files visible to the server");
  app->add_option("--imports", o.imports, "theory imports")->delimiter(',');
}

inline Result<RunConfig, detail::ConfigError> resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) return unexpected(detail::ConfigError{"config is not valid JSON: " + o.config_path});
    if (auto ok = apply_config(j, c); !ok) return unexpected(ok.error());
    // Relative paths in the file are relative to the file itself.
    const auto base = std::filesystem::path(o.config_path).parent_path();
    for (std::string* p : {&c.whole_backend.script_path, &c.step_backend.script_path, &c.oracle_path})
      if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
  }
  auto& p = c.pipeline;
  if (o.n) p.whole_sampling.n = *o.n;
  if (o.temperature) p.whole_sampling.temperature = *o.temperature;
  if (o.timeout) p.check_timeout = *o.timeout;
  if (o.workers) p.workers = *o.workers;
  if (o.refine_budget) p.refine_budget = *o.refine_budget;
  if (o.step_n) p.step_sampling.n = *o.step_n;
  if (o.seed) p.whole_sampling.seed = p.step_sampling.seed = *o.seed;
  if (o.backend) {
    auto k = detail::backend_kind(*o.backend);
    if (!k) return unexpected(k.error());
    c.whole_backend.kind = *k;
  }
  if (o.endpoint) c.whole_backend.endpoint = *o.endpoint;
  if (o.model) c.whole_backend.model_name = *o.model;
  if (o.api_key_env) c.whole_backend.api_key_env = *o.api_key_env;
  if (o.script) c.whole_backend.script_path = *o.script;
  if (o.step_script) {
    if (!c.step_backend_set) c.step_backend = model::BackendConfig{};
    c.step_backend.kind = model::BackendKind::Scripted;
    c.step_backend.script_path = *o.step_script;
    c.step_backend_set = true;
  }
  if (o.no_hammer) p.use_hammer = false;
  if (o.no_step_model) p.use_step_model = false;
  if (o.no_refine) p.refine = false;
  if (o.checker) c.checker_kind = *o.checker;
  if (o.oracle) c.oracle_path = *o.oracle;
  if (o.server) {
    if (auto info = isabelle::parse_server_info(*o.server)) {
      c.isabelle.host = info->host;
      c.isabelle.port = info->port;
      c.isabelle.password = info->password;
    } else {
      const auto colon = o.server->rfind(':');
      if (colon == std::string::npos) return unexpected(detail::ConfigError{"--server must be host:port"});
      c.isabelle.host = o.server->substr(0, colon);
      try {
        c.isabelle.port = std::stoi(o.server->substr(colon + 1));
      } catch (const std::exception&) {
        return unexpected(detail::ConfigError{"--server port is not a number"});
      }
    }
  }
  if (o.password) c.isabelle.password = *o.password;
  if (o.session) c.isabelle.session = p.wrapper.session = *o.session;
  if (o.work_dir) c.isabelle.work_dir = *o.work_dir;
  if (!o.imports.empty()) {
    p.wrapper.imports = o.imports;
    c.imports_set = true;
  }
  if (o.jobs) c.jobs = *o.jobs;
  if (p.workers == 0) return unexpected(detail::ConfigError{"workers must be positive"});
  if (!c.prep.valid()) return unexpected(detail::ConfigError{"prep step bounds need min <= max"});
  if (c.checker_kind != "mock" && c.checker_kind != "isabelle")
    return unexpected(detail::ConfigError{"checker must be mock or isabelle"});
  return c;
}

// ---------------------------------------------------------------------------
// Wiring

struct CheckerRig {
  std::unique_ptr<checker::ProverBackend> backend;
  std::unique_ptr<checker::CheckService> service;
};

inline Result<CheckerRig, detail::ConfigError> make_checker(const RunConfig& c) {
  CheckerRig rig;
  if (c.checker_kind == "mock") {
    checker::MockOracle oracle;
    if (!c.oracle_path.empty()) {
      auto o = checker::MockOracle::from_file(c.oracle_path);
      if (!o) return unexpected(detail::ConfigError{o.error()});
      oracle = std::move(*o);
    }
    rig.backend = std::make_unique<checker::MockBackend>(std::move(oracle));
  } else {
    if (c.isabelle.port <= 0) return unexpected(detail::ConfigError{"isabelle checker needs --server host:port"});
    rig.backend = std::make_unique<isabelle::IsabelleBackend>(c.isabelle, c.pipeline.workers);
  }
  checker::ServiceConfig sc;
  sc.slots = c.pipeline.workers;
  sc.grace = c.isabelle.grace;
  rig.service = std::make_unique<checker::CheckService>(*rig.backend, sc);
  return rig;
}

struct ModelRig {
  std::unique_ptr<model::Backend> whole;
  std::unique_ptr<model::Backend> step;  // null when no step model is configured
};

inline Result<ModelRig, model::BackendError> make_models(const RunConfig& c) {
  ModelRig rig;
  auto w = model::make_backend(c.whole_backend);
  if (!w) return unexpected(w.error());
  rig.whole = std::move(*w);
  if (!c.pipeline.use_step_model) return rig;
  model::BackendConfig step = c.step_backend;
  if (!c.step_backend_set) {
    if (c.whole_backend.kind != model::BackendKind::HttpChat) return rig;
    step = c.whole_backend;
  }
  auto s = model::make_backend(step);
  if (!s) return unexpected(s.error());
  rig.step = std::move(*s);
  return rig;
}

inline std::optional<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Imports named in a "theory X imports A B begin" header, if any.
inline std::vector<std::string> header_imports(std::string_view text) {
  std::vector<std::string> out;
  auto toks = syntax::tokenize(text);
  if (!toks) return out;
  bool in_imports = false;
  for (const auto& t : *toks) {
    if (t.text == "imports") {
      in_imports = true;
    } else if (t.text == "begin") {
      break;
    } else if (in_imports) {
      out.push_back(t.kind == syntax::TokenKind::String ? syntax::unquote(t.text) : t.text);
    }
  }
  return out;
}

struct TheoremFile {
  syntax::TheoremDecl decl;
  std::string proof_text;  // whatever follows the statement, minus a closing "end"
  std::vector<std::string> imports;
};

inline Result<TheoremFile, std::string> load_theorem_file(const std::string& path) {
  auto text = read_file(path);
  if (!text) return unexpected("cannot read " + path);
  auto parsed = syntax::parse_theorem(*text);
  if (!parsed) return unexpected(path + ": " + parsed.error().describe());
  TheoremFile f;
  f.decl = parsed->decl;
  f.imports = header_imports(*text);
  std::string rest = text->substr(parsed->proof_offset);
  auto toks = syntax::tokenize(rest);
  if (toks && !toks->empty() && toks->back().text == "end" && !f.imports.empty())
    rest = rest.substr(0, rest.rfind("end"));
  const auto b = rest.find_first_not_of(" \t\r\n");
  const auto e = rest.find_last_not_of(" \t\r\n");
  f.proof_text = b == std::string::npos ? "" : rest.substr(b, e - b + 1);
  return f;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Io {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

inline int cmd_prove(const Overrides& o, const std::string& theorem_path, Io io) {
  auto cfg = resolve(o);
  if (!cfg) return io.err << "config: " << cfg.error().detail << "\n", kUsage;
  auto thm = load_theorem_file(theorem_path);
  if (!thm) return io.err << thm.error() << "\n", kUsage;
  if (!cfg->imports_set && !thm->imports.empty()) cfg->pipeline.wrapper.imports = thm->imports;
  auto models = make_models(*cfg);
  if (!models) return io.err << "model backend: " << models.error().describe() << "\n", models.error().kind == model::BackendErrorKind::BadConfig ? kUsage : kBackendFailure;
  auto checker = make_checker(*cfg);
  if (!checker) return io.err << "checker: " << checker.error().detail << "\n", kUsage;
  auto r = orchestrator::prove(thm->decl, cfg->pipeline,
                               {*models->whole, models->step.get(), *checker->service});
  const std::string name = thm->decl.name.value_or(std::filesystem::path(theorem_path).stem().string());
  if (!r) {
    io.err << (r.error().kind == orchestrator::PipelineErrorKind::Backend ? "model backend: " : "checker: ")
           << r.error().detail << "\n";
    return kBackendFailure;
  }
  auto rec = orchestrator::result_record(name, *r);
  rec["config"] = config_json(*cfg);
  io.out << rec.dump() << "\n";
  return r->status == orchestrator::ProveStatus::Unsolved ? kUnsolved : kOk;
}

inline int cmd_sketch(const std::string& path, Io io) {
  auto text = read_file(path);
  if (!text) return io.err << "cannot read " << path << "\n", kUsage;
  std::optional<syntax::TheoremDecl> decl;
  std::string proof_text = *text;
  if (auto f = load_theorem_file(path)) {
    decl = f->decl;
    proof_text = f->proof_text;
  }
  auto proof = syntax::parse_proof(proof_text);
  if (!proof) return io.err << "proof does not parse: " << proof.error().describe() << "\n", kUnsolved;
  const auto s = sketch::build_sketch(*proof);
  ordered_json j;
  j["skeleton"] = syntax::render(s.skeleton);
  j["holes"] = s.holes.size();
  j["subgoals"] = ordered_json::array();
  for (const auto& g : sketch::parse_subgoals(s, decl ? &*decl : nullptr)) {
    ordered_json sg;
    sg["hole"] = g.hole_id;
    if (g.case_name) sg["case"] = *g.case_name;
    sg["goal"] = g.goal_prop;
    sg["context"] = g.context_lines;
    j["subgoals"].push_back(sg);
  }
  io.out << j.dump(2) << "\n";
  return kOk;
}

inline int cmd_filter(bool lenient, Io io) {
  std::ostringstream ss;
  ss << io.in.rdbuf();
  filter::FilterConfig fc;
  if (lenient) fc.mode = filter::EnvelopeMode::Lenient;
  const auto v = filter::filter_response({ss.str(), 0}, fc);
  ordered_json j;
  j["accepted"] = v.accepted;
  if (v.accepted) {
    j["proof"] = v.proof_text;
    j["style"] = syntax::to_string(syntax::classify_style(*v.script));
    j["steps"] = syntax::count_steps(*v.script);
  } else {
    j["reason"] = filter::to_string(*v.reason);
    j["detail"] = v.detail;
  }
  io.out << j.dump() << "\n";
  return v.accepted ? kOk : kUnsolved;
}

struct PrepArgs {
  std::string input, out_dir, split;
  bool labels = false;
  std::optional<std::size_t> apply_min, apply_max, isar_min, isar_max;
};

inline int cmd_prep(const Overrides& o, const PrepArgs& a, Io io) {
  auto cfg = resolve(o);
  if (!cfg) return io.err << "config: " << cfg.error().detail << "\n", kUsage;
  auto& pc = cfg->prep;
  if (a.labels) pc.emit_labels = true;
  if (a.apply_min) pc.apply_min = *a.apply_min;
  if (a.apply_max) pc.apply_max = *a.apply_max;
  if (a.isar_min) pc.isar_min = *a.isar_min;
  if (a.isar_max) pc.isar_max = *a.isar_max;
  if (!pc.valid()) return io.err << "step bounds need min <= max\n", kUsage;
  std::optional<std::vector<unsigned>> split;
  if (!a.split.empty()) {
    split = dataprep::parse_split(a.split);
    if (!split) return io.err << "--split wants comma-separated percentages summing to 100\n", kUsage;
  }
  auto s = dataprep::run_prep(a.input, a.out_dir, pc, split);
  if (!s) return io.err << to_string(s.error().kind) << ": " << s.error().detail << "\n", kUsage;
  ordered_json j;
  j["input"] = s->input;
  j["isar_kept"] = s->isar_kept;
  j["apply_kept"] = s->apply_kept;
  j["dropped_by_steps"] = s->dropped_by_steps;
  j["rejects"] = s->rejects;
  j["outputs"] = ordered_json::array();
  for (const auto& p : s->outputs) j["outputs"].push_back(p.string());
  j["config"] = config_json(*cfg);
  io.out << j.dump() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string dataset, report;
  std::optional<std::size_t> k;
  bool unbiased = false;
};

inline int cmd_eval(Overrides o, const EvalArgs& a, Io io) {
  if (a.k) o.n = *a.k;
  auto cfg = resolve(o);
  if (!cfg) return io.err << "config: " << cfg.error().detail << "\n", kUsage;
  if (a.unbiased) cfg->unbiased = true;
  auto ds = eval::read_dataset(a.dataset);
  if (!ds) return io.err << ds.error().detail << "\n", kUsage;
  auto models = make_models(*cfg);
  if (!models) return io.err << "model backend: " << models.error().describe() << "\n", models.error().kind == model::BackendErrorKind::BadConfig ? kUsage : kBackendFailure;
  auto checker = make_checker(*cfg);
  if (!checker) return io.err << "checker: " << checker.error().detail << "\n", kUsage;
  auto rep = eval::run_eval(*ds, cfg->pipeline, {*models->whole, models->step.get(), *checker->service},
                            {cfg->jobs, cfg->unbiased});
  std::ofstream file;
  std::ostream* out = &io.out;
  if (!a.report.empty()) {
    file.open(a.report, std::ios::trunc);
    if (!file) return io.err << "cannot write " << a.report << "\n", kUsage;
    out = &file;
  }
  for (const auto& t : rep.theorems) *out << eval::theorem_record(t).dump() << "\n";
  *out << eval::aggregate_record(rep, config_json(*cfg)).dump() << "\n";
  if (rep.errors() > 0) return io.err << rep.errors() << " theorem(s) failed with backend errors\n", kBackendFailure;
  return kOk;
}

inline int cmd_check(const Overrides& o, const std::string& path, Io io) {
  auto cfg = resolve(o);
  if (!cfg) return io.err << "config: " << cfg.error().detail << "\n", kUsage;
  auto text = read_file(path);
  if (!text) return io.err << "cannot read " << path << "\n", kUsage;
  auto checker = make_checker(*cfg);
  if (!checker) return io.err << "checker: " << checker.error().detail << "\n", kUsage;
  const auto v = checker->service->check({*text, cfg->pipeline.check_timeout});
  ordered_json j;
  j["status"] = checker::to_string(v.status);
  if (!v.message.empty()) j["message"] = v.message;
  if (v.position) j["position"] = *v.position;
  j["elapsed"] = v.elapsed;
  io.out << j.dump() << "\n";
  if (v.status == checker::VerdictStatus::CheckerError) return kBackendFailure;
  return v.valid() ? kOk : kUnsolved;
}

// ---------------------------------------------------------------------------

/// Runs one command line (without the program name).
inline int run(const std::vector<std::string>& args, std::istream& in = std::cin, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  Io io{in, out, err};
  CLI::App app{"Theorem proving pipeline: whole-proof sampling, sketching and hole-wise refinement"};
  app.name("hybridprover");
  app.require_subcommand(1);

  Overrides o;
  std::string theorem_path, sketch_path, check_path;
  bool lenient = false;
  PrepArgs prep;
  EvalArgs ev;

  auto* prove = app.add_subcommand("prove", "run the full pipeline on one theorem file");
  prove->add_option("--theorem", theorem_path, "theorem or theory file")->required()->check(CLI::ExistingFile);
  add_pipeline_flags(prove, o);
  add_checker_flags(prove, o);

  auto* sk = app.add_subcommand("sketch", "print the proof sketch and subgoals of a proof");
  sk->add_option("file", sketch_path, "proof file, optionally with its theorem")->required()->check(CLI::ExistingFile);

  auto* flt = app.add_subcommand("filter", "apply the response filter to standard input");
  flt->add_flag("--lenient", lenient, "accept a proof embedded in surrounding prose");

  auto* pr = app.add_subcommand("prep", "purify, split and filter a proof corpus");
  pr->add_option("--input", prep.input, "JSONL file or directory of JSONL files")->required();
  pr->add_option("--out", prep.out_dir, "output directory")->required();
  pr->add_option("--split", prep.split, "train/valid/test percentages, e.g. 95,1,4");
  pr->add_flag("--labels", prep.labels, "emit the source path as a label");
  pr->add_option("--apply-min", prep.apply_min);
  pr->add_option("--apply-max", prep.apply_max);
  pr->add_option("--isar-min", prep.isar_min);
  pr->add_option("--isar-max", prep.isar_max);
  pr->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);

  auto* evc = app.add_subcommand("eval", "prove a theorem set and report solve rate and pass@k");
  evc->add_option("--dataset", ev.dataset, "JSONL of {name, theorem}")->required()->check(CLI::ExistingFile);
  evc->add_option("--k", ev.k, "samples per theorem (the largest k reported)");
  evc->add_option("--report", ev.report, "write the report here instead of standard output");
  evc->add_option("--jobs", o.jobs, "theorems proved concurrently");
  evc->add_flag("--unbiased", ev.unbiased, "use the unbiased pass@k estimator");
  add_pipeline_flags(evc, o);
  add_checker_flags(evc, o);

  auto* chk = app.add_subcommand("check", "check a theory file");
  chk->add_option("--theory", check_path, "theory file")->required()->check(CLI::ExistingFile);
  chk->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  chk->add_option("--timeout", o.timeout, "checker timeout in seconds");
  add_checker_flags(chk, o);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prove) return cmd_prove(o, theorem_path, io);
    if (*sk) return cmd_sketch(sketch_path, io);
    if (*flt) return cmd_filter(lenient, io);
    if (*pr) return cmd_prep(o, prep, io);
    if (*evc) return cmd_eval(o, ev, io);
    if (*chk) return cmd_check(o, check_path, io);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kBackendFailure;
  }
  return kUsage;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace hybridprover::cli
