#include <httplib.h>

#include "cspeech/common.hpp"
#include "cspeech/human_eval.hpp"
#include "cspeech/log.hpp"

namespace cspeech::human_eval {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ValidationError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const InputError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
    } catch (const AuthorizationError& e) {
      reply(res, 403, {{"error", e.what()}});
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const std::exception& e) {
      log_warn(std::string("human-eval: ") + req.method + " " + req.path + ": " + e.what());
      reply(res, 500, {{"error", "internal error"}});
    }
  };
}

json parse_body(const httplib::Request& req) {
  auto j = json::parse(req.body);
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

}  // namespace

void register_routes(httplib::Server& server, Study& study, const std::optional<std::filesystem::path>& static_dir) {
  server.Get("/api/annotators/:id/next", guarded([&study](const httplib::Request& req, httplib::Response& res) {
               const auto t = study.next_task(req.path_params.at("id"));
               reply(res, 200, t ? annotator_payload(*t) : json{{"done", true}});
             }));

  server.Post("/api/tasks/:task_id/labels", guarded([&study](const httplib::Request& req, httplib::Response& res) {
                auto body = parse_body(req);
                const auto& path_id = req.path_params.at("task_id");
                if (body.contains("task_id") && body["task_id"] != path_id)
                  throw ValidationError("task_id in body does not match the path");
                body["task_id"] = path_id;
                body.erase("timestamp");
                const auto stored = study.submit_label(label_record_from_json(body));
                reply(res, 201, {{"task_id", stored.task_id}, {"annotator_id", stored.annotator_id}, {"stored", true}});
              }));

  server.Get("/api/agreement", guarded([&study](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, to_json(study.agreement()));
             }));

  server.Get("/api/disagreements", guarded([&study](const httplib::Request&, httplib::Response& res) {
               const auto tasks = study.tasks();
               const auto labels = study.labels();
               const auto& [a, b] = study.annotators();
               json out = json::array();
               for (const auto& d : study.disagreements()) {
                 const auto t = std::find_if(tasks.begin(), tasks.end(), [&](const auto& x) { return x.task_id == d.task_id; });
                 json item = annotator_payload(*t);
                 item["dimension"] = to_string(d.dimension);
                 item["adjudicated"] = d.adjudicated;
                 json answers = json::object();
                 for (const auto& l : labels)
                   if (l.task_id == d.task_id && (l.annotator_id == a || l.annotator_id == b))
                     answers[l.annotator_id] = l.answer(d.dimension);
                 item["answers"] = answers;
                 out.push_back(item);
               }
               reply(res, 200, out);
             }));

  server.Post("/api/adjudications", guarded([&study](const httplib::Request& req, httplib::Response& res) {
                auto body = parse_body(req);
                body.erase("timestamp");
                const auto stored = study.adjudicate(adjudication_from_json(body));
                reply(res, 201, to_json(stored));
              }));

  server.Get("/api/summary", guarded([&study](const httplib::Request&, httplib::Response& res) {
               const auto s = study.summary();
               reply(res, 200, to_json(std::span<const MethodSummary>(s)));
             }));

  if (static_dir) {
    if (!server.set_mount_point("/", static_dir->string()))
      throw ConfigError("cannot serve static files from " + static_dir->string());
  }
}

}  // namespace cspeech::human_eval
