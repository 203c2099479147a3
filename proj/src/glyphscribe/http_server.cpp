#include "glyphscribe/http_server.hpp"

#include "glyphscribe/error.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace glyphscribe::service {

int http_status(ErrorCode code) {
  switch (code) {
  case ErrorCode::InvalidArgument:
  case ErrorCode::Format:
    return 400;
  case ErrorCode::NotFound:
    return 404;
  case ErrorCode::Conflict:
    return 409;
  case ErrorCode::PayloadTooLarge:
    return 413;
  case ErrorCode::Unavailable:
    return 503;
  case ErrorCode::Io:
  case ErrorCode::Degenerate:
  case ErrorCode::Numerical:
    return 500;
  }
  return 500;
}

namespace {

const char *error_name(ErrorCode code) {
  switch (code) {
  case ErrorCode::InvalidArgument:
    return "invalid_argument";
  case ErrorCode::NotFound:
    return "not_found";
  case ErrorCode::Io:
    return "io_error";
  case ErrorCode::Format:
    return "bad_format";
  case ErrorCode::Degenerate:
    return "degenerate";
  case ErrorCode::Numerical:
    return "numerical_error";
  case ErrorCode::Conflict:
    return "conflict";
  case ErrorCode::Unavailable:
    return "model_unavailable";
  case ErrorCode::PayloadTooLarge:
    return "payload_too_large";
  }
  return "error";
}

void send_json(httplib::Response &res, const nlohmann::json &body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response &res, int status, const std::string &error,
                const std::string &detail) {
  send_json(res, {{"error", error}, {"detail", detail}}, status);
}

nlohmann::json parse_body(const httplib::Request &req) {
  if (req.body.empty())
    return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object())
      fail(ErrorCode::InvalidArgument, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorCode::InvalidArgument, std::string("request body is not valid JSON: ") + e.what());
  }
}

Roi parse_roi(const nlohmann::json &body) {
  if (!body.contains("roi"))
    fail(ErrorCode::InvalidArgument, "missing 'roi'");
  const auto &r = body.at("roi");
  try {
    if (r.is_array() && r.size() == 4)
      return {r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
    if (r.is_object())
      return {r.at("x0").get<int>(), r.at("y0").get<int>(), r.at("x1").get<int>(),
              r.at("y1").get<int>()};
  } catch (const nlohmann::json::exception &) {
  }
  fail(ErrorCode::InvalidArgument, "'roi' must be [x0, y0, x1, y1] or {x0, y0, x1, y1} integers");
}

nlohmann::json glyph_list(const std::vector<SessionGlyph> &glyphs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto &g : glyphs)
    out.push_back(glyph_json(g));
  return out;
}

// Runs a handler, mapping library errors to their HTTP status.
template <typename F> void guarded(httplib::Response &res, F &&f) {
  try {
    f();
  } catch (const Error &e) {
    send_error(res, http_status(e.code()), error_name(e.code()), e.what());
  } catch (const std::exception &e) {
    send_error(res, 500, "internal_error", e.what());
  }
}

} // namespace

HttpServer::HttpServer(std::shared_ptr<Service> service)
    : service_(std::move(service)), server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::routes() {
  auto &srv = *server_;
  const auto &cfg = service_->config();
  // Leave room above the upload limit so oversize uploads reach our own 413.
  srv.set_payload_max_length(cfg.max_upload_bytes * 2 + (1u << 20));
  srv.new_task_queue = [n = cfg.threads] { return new httplib::ThreadPool(static_cast<size_t>(n)); };

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request &, httplib::Response &res) { res.status = 204; });

  srv.set_error_handler([](const httplib::Request &req, httplib::Response &res) {
    if (!res.body.empty())
      return httplib::Server::HandlerResponse::Unhandled;
    const std::string error = res.status == 404   ? "not_found"
                              : res.status == 413 ? "payload_too_large"
                                                  : "http_" + std::to_string(res.status);
    send_error(res, res.status, error, std::string(httplib::status_message(res.status)) + ": " +
                                           req.method + " " + req.path);
    return httplib::Server::HandlerResponse::Handled;
  });
  srv.set_logger([](const httplib::Request &req, const httplib::Response &res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });

  srv.Get("/health", [this](const httplib::Request &, httplib::Response &res) {
    send_json(res, {{"status", "ok"},
                    {"sessions", service_->session_count()},
                    {"backends", service_->models().status()}});
  });

  srv.Post("/sessions", [this](const httplib::Request &req, httplib::Response &res) {
    guarded(res, [&] {
      if (!req.is_multipart_form_data())
        fail(ErrorCode::InvalidArgument, "expected multipart/form-data with an 'image' part");
      if (!req.has_file("image"))
        fail(ErrorCode::InvalidArgument, "missing 'image' part");
      const auto image = req.get_file_value("image");
      SessionMetadata meta;
      if (req.has_file("metadata")) {
        const auto &text = req.get_file_value("metadata").content;
        nlohmann::json m;
        try {
          m = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception &e) {
          fail(ErrorCode::InvalidArgument, std::string("metadata is not valid JSON: ") + e.what());
        }
        if (!m.is_object())
          fail(ErrorCode::InvalidArgument, "metadata must be a JSON object");
        meta.support = m.value("support", std::string{});
        meta.spell = m.value("spell", std::string{});
      }
      const auto *bytes = reinterpret_cast<const std::uint8_t *>(image.content.data());
      const auto id = service_->create_session({bytes, image.content.size()}, meta);
      send_json(res, {{"session_id", id}}, 201);
    });
  });

  srv.Get(R"(/sessions/([0-9a-f]+))", [this](const httplib::Request &req, httplib::Response &res) {
    guarded(res, [&] { send_json(res, service_->session_json(req.matches[1])); });
  });

  srv.Post(R"(/sessions/([0-9a-f]+)/segment)",
           [this](const httplib::Request &req, httplib::Response &res) {
             guarded(res, [&] {
               const auto glyphs = service_->segment_roi(req.matches[1], parse_roi(parse_body(req)));
               send_json(res, {{"glyphs", glyph_list(glyphs)}});
             });
           });

  srv.Post(R"(/sessions/([0-9a-f]+)/classify)",
           [this](const httplib::Request &req, httplib::Response &res) {
             guarded(res, [&] {
               const auto body = parse_body(req);
               std::optional<Backend> backend;
               if (body.contains("backend"))
                 backend = backend_from_string(body.at("backend").get<std::string>());
               const auto glyphs = service_->classify_session(req.matches[1], backend);
               send_json(res, {{"glyphs", glyph_list(glyphs)}});
             });
           });

  srv.Post(R"(/sessions/([0-9a-f]+)/corrections)",
           [this](const httplib::Request &req, httplib::Response &res) {
             guarded(res, [&] {
               const auto body = parse_body(req);
               if (!body.contains("corrections") || !body.at("corrections").is_array())
                 fail(ErrorCode::InvalidArgument, "'corrections' must be an array");
               std::vector<Correction> list;
               for (const auto &c : body.at("corrections")) {
                 if (!c.is_object() || !c.contains("glyph_id") || !c.contains("code") ||
                     !c.at("glyph_id").is_string() || !c.at("code").is_string())
                   fail(ErrorCode::InvalidArgument,
                        "each correction needs string 'glyph_id' and 'code'");
                 list.push_back({c.at("glyph_id").get<std::string>(), c.at("code").get<std::string>()});
               }
               const auto glyphs = service_->apply_corrections(req.matches[1], list);
               send_json(res, {{"glyphs", glyph_list(glyphs)}});
             });
           });

  srv.Get(R"(/sessions/([0-9a-f]+)/export.csv)",
          [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
              const auto out = service_->export_session(req.matches[1]);
              res.set_header("Content-Disposition", "attachment; filename=\"transcription.csv\"");
              res.set_content(out.csv, "text/csv; charset=utf-8");
            });
          });

  srv.Get(R"(/sessions/([0-9a-f]+)/glyphs/([A-Za-z0-9]+)/crop.png)",
          [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
              const auto png = encode_png(service_->glyph_crop(req.matches[1], req.matches[2]));
              res.set_content(std::string(png.begin(), png.end()), "image/png");
            });
          });
}

int HttpServer::bind(const std::string &host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : server_->bind_to_port(host, port)
                                                                       ? port
                                                                       : -1;
  if (bound < 0)
    fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  spdlog::info("listening on http://{}:{}", host, bound);
  return bound;
}

void HttpServer::listen() { server_->listen_after_bind(); }

int HttpServer::start(const std::string &host, int port) {
  const int bound = bind(host, port);
  thread_ = std::thread([this] { listen(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  if (server_)
    server_->stop();
  if (thread_.joinable())
    thread_.join();
}

} // namespace glyphscribe::service
