#include "toxipipe/server.hpp"

#include <fstream>
#include <sstream>

#include "httplib.h"
#include "toxipipe/cohort.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/pipeline.hpp"
#include "toxipipe/stats_export.hpp"

namespace toxipipe::gateway {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

json record_to_json(const annotation::AnnotationRecord& r) {
  return {{"post_id", r.post_id},
          {"annotator_id", r.annotator_id},
          {"label", to_string(r.label)},
          {"labeled_at", format_iso8601(r.labeled_at)}};
}

// The task as shown to an annotator: normalized text with highlight spans,
// never the author.
json task_to_json(const corpus::MatchedPost& m) {
  json highlights = json::array();
  for (const auto& t : m.matched_terms) {
    highlights.push_back({{"offset", t.offset},
                          {"length", t.surface.size()},
                          {"seed", t.seed},
                          {"surface", t.surface},
                          {"variant", t.variant}});
  }
  json j = {{"post_id", m.post.post_id},
            {"text", m.normalized_text},
            {"source", corpus::to_string(m.post.source)},
            {"created_at", format_iso8601(m.post.created_at)},
            {"highlights", std::move(highlights)}};
  if (m.post.region) j["region"] = *m.post.region;
  return j;
}

json agreement_to_json(const annotation::AgreementReport& r) {
  const std::size_t n = r.annotators.size();
  json matrix = json::array();
  for (std::size_t i = 0; i < n; ++i) matrix.push_back(json(std::vector<json>(n, nullptr)));
  json pairs = json::array();
  const auto index = [&](const std::string& id) {
    return static_cast<std::size_t>(std::lower_bound(r.annotators.begin(), r.annotators.end(), id) -
                                    r.annotators.begin());
  };
  for (const auto& p : r.pairs) {
    const json k = p.kappa ? json(*p.kappa) : json(nullptr);
    const std::size_t a = index(p.annotator_a), b = index(p.annotator_b);
    matrix[a][b] = k;
    matrix[b][a] = k;
    pairs.push_back({{"a", p.annotator_a}, {"b", p.annotator_b}, {"shared_posts", p.shared_posts}, {"kappa", k}});
  }
  return {{"annotators", r.annotators},
          {"matrix", std::move(matrix)},
          {"pairs", std::move(pairs)},
          {"eligible_pairs", r.eligible_pairs},
          {"average", r.average ? json(*r.average) : json(nullptr)}};
}

}  // namespace

ServerOptions server_options(const PipelineConfig& config) {
  ServerOptions o;
  o.settings = config.server;
  o.store = config.store_config();
  o.work_dir = config.paths.work_dir;
  o.labels_path = config.paths.labels;
  o.salt = config.cohort.salt;
  std::ifstream in(config.paths.guideline, std::ios::binary);
  if (!in) throw ConfigError("cannot read guideline " + config.paths.guideline.string());
  std::ostringstream text;
  text << in.rdbuf();
  o.guideline = text.str();
  return o;
}

Server::Server(ServerOptions options)
    : options_(std::move(options)),
      store_(options_.store, options_.clock),
      http_(std::make_unique<httplib::Server>()) {
  // httplib's default adds SO_REUSEPORT, which lets a second server share a
  // busy port instead of failing.
  http_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  store_.set_guideline(options_.guideline);
  const WorkLayout layout{options_.work_dir};
  if (fs::exists(layout.matched())) store_.load_tasks(corpus::read_matched_jsonl(layout.matched()));
  if (!options_.labels_path.empty() && fs::exists(options_.labels_path)) {
    std::ifstream in(options_.labels_path, std::ios::binary);
    for (const auto& r : annotation::read_labels_csv(in)) store_.restore(r);
  }
  routes();
}

Server::~Server() { stop(); }

void Server::load_tasks(std::vector<corpus::MatchedPost> tasks) { store_.load_tasks(std::move(tasks)); }

int Server::start() {
  const auto& s = options_.settings;
  if (s.port == 0) {
    port_ = http_->bind_to_any_port(s.bind);
  } else {
    port_ = http_->bind_to_port(s.bind, s.port) ? s.port : -1;
  }
  if (port_ < 0) {
    throw IoError("cannot bind " + s.bind + ":" + std::to_string(s.port));
  }
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port_;
}

void Server::stop() {
  if (thread_.joinable()) {
    http_->stop();
    thread_.join();
  }
}

void Server::persist_labels() {
  if (options_.labels_path.empty()) return;
  std::lock_guard lock(persist_mu_);
  const auto records = store_.records();
  if (options_.labels_path.has_parent_path()) fs::create_directories(options_.labels_path.parent_path());
  const fs::path tmp = options_.labels_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    annotation::write_labels_csv(out, records);
  }
  fs::rename(tmp, options_.labels_path);
}

void Server::routes() {
  auto& http = *http_;
  const auto authorized = [this](const httplib::Request& req, httplib::Response& res) {
    const auto& tokens = options_.settings.annotator_tokens;
    if (tokens.empty()) return true;
    const std::string token = req.get_header_value("X-Annotator-Token");
    if (std::find(tokens.begin(), tokens.end(), token) != tokens.end()) return true;
    send_error(res, 401, "unauthorized", "missing or unknown X-Annotator-Token");
    return false;
  };

  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    } catch (...) {
      send_error(res, 500, "internal", "unknown error");
    }
  });

  http.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"version", kToolVersion}});
  });

  http.Get("/api/annotation/next", [this, authorized](const httplib::Request& req, httplib::Response& res) {
    if (!authorized(req, res)) return;
    const std::string annotator = req.get_param_value("annotator");
    if (annotator.empty()) return send_error(res, 400, "missing_annotator", "query parameter 'annotator' is required");
    try {
      const auto task = store_.next_task(annotator);
      json body = {{"done", !task.has_value()}, {"remaining", store_.remaining_for(annotator)}};
      body["task"] = task ? task_to_json(*task) : json(nullptr);
      send_json(res, 200, body);
    } catch (const ContractError& e) {
      send_error(res, 403, "not_enrolled", e.what());
    }
  });

  http.Post("/api/annotation/label", [this, authorized](const httplib::Request& req, httplib::Response& res) {
    if (!authorized(req, res)) return;
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error&) {
      return send_error(res, 400, "bad_request", "body is not JSON");
    }
    const auto field = [&](const char* key) -> std::optional<std::string> {
      if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) return std::nullopt;
      return body.at(key).get<std::string>();
    };
    const auto post_id = field("post_id");
    const auto annotator = field("annotator_id");
    const auto label_text = field("label");
    if (!post_id || !annotator || !label_text || annotator->empty()) {
      return send_error(res, 400, "bad_request", "expected {post_id, annotator_id, label} strings");
    }
    const auto label = parse_label(*label_text);
    if (!label) return send_error(res, 400, "invalid_label", "unknown label '" + *label_text + "'");
    try {
      const auto record = store_.submit(*post_id, *annotator, *label);
      persist_labels();
      send_json(res, 200, {{"record", record_to_json(record)}});
    } catch (const NotFoundError& e) {
      send_error(res, 404, "unknown_post", e.what());
    } catch (const ContractError& e) {
      send_error(res, 403, "not_enrolled", e.what());
    }
  });

  http.Get("/api/annotation/labels", [this](const httplib::Request& req, httplib::Response& res) {
    const auto records = req.has_param("post_id") ? store_.records_for(req.get_param_value("post_id"))
                                                   : store_.records();
    json out = json::array();
    for (const auto& r : records) out.push_back(record_to_json(r));
    send_json(res, 200, {{"records", std::move(out)}});
  });

  http.Get("/api/annotation/agreement", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, agreement_to_json(store_.agreement()));
  });

  http.Get("/api/annotation/guideline", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(store_.guideline(), "text/markdown; charset=utf-8");
  });

  http.Get("/api/stats/aggregate", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string format = req.has_param("format") ? req.get_param_value("format") : "json";
    if (format != "json" && format != "csv") {
      return send_error(res, 400, "bad_format", "format must be json or csv");
    }
    json stats;
    try {
      stats = load_stats(options_.work_dir);
    } catch (const DomainError& e) {
      return send_error(res, 409, "no_completed_run", e.what());
    }
    if (req.has_param("region")) stats = filter_region(stats, req.get_param_value("region"));
    if (format == "csv") {
      res.set_content(stats_to_csv(stats), "text/csv; charset=utf-8");
    } else {
      res.set_content(stats_to_json_text(stats), "application/json");
    }
  });

  http.Get("/api/cohort/summary", [this](const httplib::Request&, httplib::Response& res) {
    const cohort::CohortStore store(WorkLayout{options_.work_dir}.cohort());
    if (!store.exists()) return send_error(res, 409, "no_cohort", "no cohort has been built yet");
    const auto s = store.load(options_.salt).summary();
    send_json(res, 200, {{"total", s.total},
                         {"active", s.active},
                         {"excluded_bot", s.excluded_bot},
                         {"excluded_manual", s.excluded_manual}});
  });
}

}  // namespace toxipipe::gateway
