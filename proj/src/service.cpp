#include "exdiff/service.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "exdiff/io.hpp"
#include "exdiff/runner.hpp"
#include "exdiff/uncertainty.hpp"
#include "httplib.h"
#include "json.hpp"

namespace exdiff {

using nlohmann::json;

namespace {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

void send_json(httplib::Response& res, int code, const json& body) {
  res.status = code;
  res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, int code, const std::string& message) {
  send_json(res, code, json{{"error", {{"code", code}, {"message", message}}}});
}

json bbox_json(const BBox& b) { return json{b.cx, b.cy, b.w, b.h}; }

json ellipse_json(int det_index, const char* corner, const Ellipse& e) {
  return json{{"detection", det_index},
              {"corner", corner},
              {"center", {e.center[0], e.center[1]}},
              {"axes", {e.a, e.b}},
              {"angle_rad", e.angle_rad},
              {"alpha", e.alpha}};
}

struct DetectParams {
  SamplerConfig sampler;
  int ensemble = 1;
  double alpha = 0.95;
};

}  // namespace

struct Service::Impl {
  ServiceConfig cfg;
  httplib::Server server;
  std::thread listen_thread;

  struct DatasetEntry {
    Dataset ds;
    double entropy_h = 0.0;
    std::map<int, const Scene*> scenes_by_id;
  };
  std::map<std::string, DatasetEntry> datasets;

  struct RunEntry {
    std::string status;  // pending | done | failed
    json body;
  };
  std::mutex store_mutex;
  std::map<std::string, RunEntry> runs;
  std::atomic<std::uint64_t> sequence{0};
  std::vector<std::thread> workers;
  std::mutex worker_mutex;

  explicit Impl(const ServiceConfig& c) : cfg(c) { route(); }

  ~Impl() {
    server.stop();
    if (listen_thread.joinable()) listen_thread.join();
    join_workers();
  }

  void join_workers() {
    std::lock_guard<std::mutex> lock(worker_mutex);
    for (std::thread& t : workers)
      if (t.joinable()) t.join();
    workers.clear();
  }

  std::filesystem::path runs_dir() const {
    return std::filesystem::path(cfg.data_dir) / "runs";
  }

  int load_data() {
    datasets.clear();
    std::error_code ec;
    std::filesystem::create_directories(runs_dir(), ec);
    for (const auto& entry :
         std::filesystem::directory_iterator(cfg.data_dir)) {
      if (!entry.is_regular_file()) continue;
      if (entry.path().extension() != ".json") continue;
      try {
        DatasetEntry de;
        de.ds = io::load_dataset(entry.path().string());
        std::vector<BBox> boxes;
        for (const Scene& s : de.ds.scenes)
          for (const GtObject& o : s.objects) boxes.push_back(o.box);
        de.entropy_h = boxes.empty() ? 1.0 : spatial_entropy(boxes, 16);
        std::string id = entry.path().stem().string();
        auto& stored = datasets[id] = std::move(de);
        for (const Scene& s : stored.ds.scenes)
          stored.scenes_by_id[s.scene_id] = &s;
      } catch (const std::exception& e) {
        std::cerr << "skipping " << entry.path() << ": " << e.what() << "\n";
      }
    }
    return static_cast<int>(datasets.size());
  }

  void route() {
    server.set_post_routing_handler(
        [](const httplib::Request&, httplib::Response& res) {
          res.set_header("Access-Control-Allow-Origin", "*");
        });
    server.Options(R"(/.*)", [](const httplib::Request&,
                                httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Get("/api/datasets", [this](const httplib::Request&,
                                       httplib::Response& res) {
      json out = json::array();
      for (const auto& [id, de] : datasets)
        out.push_back({{"id", id},
                       {"name", de.ds.name},
                       {"layout", layout_name(de.ds.layout)},
                       {"num_scenes", de.ds.scenes.size()},
                       {"num_classes", de.ds.num_classes},
                       {"width", de.ds.width},
                       {"height", de.ds.height},
                       {"entropy_h", de.entropy_h}});
      send_json(res, 200, out);
    });

    server.Get(R"(/api/datasets/([^/]+)/scenes/(-?\d+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                 auto it = datasets.find(req.matches[1]);
                 if (it == datasets.end())
                   return send_error(res, 404, "unknown dataset");
                 int sid = std::stoi(req.matches[2]);
                 auto sit = it->second.scenes_by_id.find(sid);
                 if (sit == it->second.scenes_by_id.end())
                   return send_error(res, 404, "unknown scene");
                 const Scene& scene = *sit->second;
                 bool hide_gt = req.get_param_value("hide_gt") == "1";
                 json out{{"scene_id", scene.scene_id},
                          {"width", scene.width},
                          {"height", scene.height},
                          {"gt_hidden", hide_gt}};
                 if (!hide_gt) {
                   json objs = json::array();
                   for (const GtObject& o : scene.objects)
                     objs.push_back({{"bbox", bbox_json(o.box)},
                                     {"class_id", o.box.class_id},
                                     {"visibility", o.visibility}});
                   out["objects"] = objs;
                 }
                 send_json(res, 200, out);
               });

    server.Post("/api/detect", [this](const httplib::Request& req,
                                      httplib::Response& res) {
      handle_detect(req, res);
    });

    server.Get(R"(/api/runs/([0-9a-f]+))", [this](const httplib::Request& req,
                                                  httplib::Response& res) {
      std::string id = req.matches[1];
      {
        std::lock_guard<std::mutex> lock(store_mutex);
        auto it = runs.find(id);
        if (it != runs.end()) {
          json body = it->second.body;
          body["status"] = it->second.status;
          body["run_id"] = id;
          return send_json(res, 200, body);
        }
      }
      // Not in memory: a record persisted by an earlier process may exist.
      std::ifstream in(runs_dir() / (id + ".json"));
      if (!in) return send_error(res, 404, "unknown run");
      json body;
      try {
        body = json::parse(in);
      } catch (const json::exception&) {
        return send_error(res, 500, "stored run record is corrupt");
      }
      send_json(res, 200, body);
    });
  }

  void handle_detect(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("invalid JSON body: ") + e.what());
    }

    std::string dataset_id;
    int scene_id = 0;
    std::vector<BBox> exemplar_boxes;
    DetectParams params;
    try {
      dataset_id = body.at("dataset").get<std::string>();
      scene_id = body.at("scene").get<int>();
    } catch (const json::exception&) {
      return send_error(res, 400, "body needs dataset and scene");
    }

    auto dit = datasets.find(dataset_id);
    if (dit == datasets.end()) return send_error(res, 404, "unknown dataset");
    const DatasetEntry& de = dit->second;
    auto sit = de.scenes_by_id.find(scene_id);
    if (sit == de.scenes_by_id.end())
      return send_error(res, 404, "unknown scene");
    const Scene& scene = *sit->second;

    if (body.contains("exemplars")) {
      const json& je = body["exemplars"];
      if (!je.is_array())
        return send_error(res, 400, "exemplars must be an array");
      for (const json& e : je) {
        if (!e.is_array() || e.size() != 5)
          return send_error(res, 400,
                            "each exemplar must be [cx, cy, w, h, class_id]");
        BBox b;
        try {
          b.cx = e[0].get<double>();
          b.cy = e[1].get<double>();
          b.w = e[2].get<double>();
          b.h = e[3].get<double>();
          b.class_id = e[4].get<int>();
        } catch (const json::exception&) {
          return send_error(res, 400, "exemplar entries must be numeric");
        }
        if (!(b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 && b.cy <= 1.0 &&
              b.w > 0.0 && b.w <= 1.0 && b.h > 0.0 && b.h <= 1.0))
          return send_error(res, 400, "exemplar geometry out of range");
        if (b.class_id < 0 || b.class_id >= de.ds.num_classes)
          return send_error(res, 400, "exemplar class_id out of range");
        exemplar_boxes.push_back(b);
      }
    }

    params.sampler.seed = 0;
    if (body.contains("params")) {
      const json& jp = body["params"];
      if (!jp.is_object())
        return send_error(res, 400, "params must be an object");
      try {
        params.sampler.n = jp.value("n", params.sampler.n);
        params.sampler.copies = jp.value("copies", params.sampler.copies);
        params.sampler.tau = jp.value("tau", params.sampler.tau);
        params.sampler.num_steps = jp.value("steps", params.sampler.num_steps);
        params.sampler.seed = jp.value("seed", params.sampler.seed);
        params.ensemble = jp.value("ensemble", params.ensemble);
        params.alpha = jp.value("alpha", params.alpha);
      } catch (const json::exception&) {
        return send_error(res, 400, "params entries must be numeric");
      }
    }
    if (params.sampler.tau > params.sampler.t_start)
      return send_error(res, 422, "tau exceeds t_start");
    if (params.ensemble < 1)
      return send_error(res, 400, "ensemble must be >= 1");
    if (!(params.alpha > 0.0 && params.alpha < 1.0))
      return send_error(res, 400, "alpha must lie in (0, 1)");
    try {
      validate(params.sampler);
    } catch (const std::invalid_argument& e) {
      return send_error(res, 400, e.what());
    }
    if (params.sampler.n + static_cast<int>(exemplar_boxes.size()) *
                               params.sampler.copies <=
        0)
      return send_error(res, 400, "proposal set would be empty");

    std::uint64_t seq = ++sequence;
    std::string run_id =
        fnv1a_hex(body.dump() + "#" + std::to_string(seq));

    if (params.ensemble <= cfg.sync_ensemble_limit) {
      json out;
      try {
        out = compute_detect(de, scene, exemplar_boxes, params, body, run_id);
      } catch (const std::exception& e) {
        return send_error(res, 500, std::string("sampling failed: ") + e.what());
      }
      store_run(run_id, "done", out);
      out["status"] = "done";
      out["run_id"] = run_id;
      send_json(res, 200, out);
      return;
    }

    {
      std::lock_guard<std::mutex> lock(store_mutex);
      runs[run_id] = RunEntry{"pending", json::object()};
    }
    {
      std::lock_guard<std::mutex> lock(worker_mutex);
      workers.emplace_back([this, &de, &scene, exemplar_boxes, params, body,
                            run_id]() {
        try {
          json out =
              compute_detect(de, scene, exemplar_boxes, params, body, run_id);
          store_run(run_id, "done", out);
        } catch (const std::exception& e) {
          store_run(run_id, "failed",
                    json{{"error",
                          {{"code", 500},
                           {"message", std::string("sampling failed: ") +
                                           e.what()}}}});
        }
      });
    }
    send_json(res, 202, json{{"run_id", run_id}, {"status", "pending"}});
  }

  void store_run(const std::string& id, const std::string& status,
                 const json& body) {
    json persisted = body;
    persisted["status"] = status;
    persisted["run_id"] = id;
    auto path = runs_dir() / (id + ".json");
    auto tmp = runs_dir() / (id + ".json.tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << persisted.dump(2) << "\n";
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    std::lock_guard<std::mutex> lock(store_mutex);
    runs[id] = RunEntry{status, body};
  }

  json compute_detect(const DatasetEntry& de, const Scene& scene,
                      const std::vector<BBox>& exemplar_boxes,
                      const DetectParams& params, const json& request,
                      const std::string& run_id) {
    auto start = std::chrono::steady_clock::now();
    Schedule sched =
        build_schedule(params.sampler.schedule_kind, params.sampler.t_start);
    OracleFactory factory(OracleParams{}, de.ds.num_classes,
                          params.sampler.signal_scale, de.entropy_h,
                          params.sampler.t_start);

    std::vector<SampleResult> members;
    SampleResult base;
    if (params.ensemble >= 2) {
      members = run_ensemble(scene, exemplar_boxes, factory, params.sampler,
                             sched, params.ensemble, params.sampler.seed);
      base = members[0];
    } else {
      base = run_single(scene, exemplar_boxes, factory, params.sampler, sched);
    }

    // Exemplars are mapped back to GT entries by best IoU so metrics can
    // apply the exclusion protocol; unmatched ones keep gt_index -1.
    std::vector<ExemplarRef> refs;
    for (const BBox& ex : exemplar_boxes) {
      ExemplarRef ref;
      ref.box = ex;
      double best = 0.5;
      for (std::size_t j = 0; j < scene.objects.size(); ++j) {
        double v = iou(ex, scene.objects[j].box);
        if (v >= best) {
          best = v;
          ref.gt_index = static_cast<int>(j);
        }
      }
      refs.push_back(ref);
    }

    json detections = json::array();
    for (std::size_t i = 0; i < base.detections.size(); ++i) {
      const BBox& d = base.detections[i];
      detections.push_back({{"bbox", bbox_json(d)},
                            {"class_id", d.class_id},
                            {"score", d.score},
                            {"origin", base.origins[i].exemplar_index}});
    }

    json ellipses = json::array();
    if (params.ensemble >= 2) {
      // Region shape comes from the exemplar clusters when available
      // (pooled), translated to each detection's cluster mean; without
      // exemplars each detection's own cluster covariance is used.
      std::array<double, 4> pooled_ul{0, 0, 0, 0}, pooled_br{0, 0, 0, 0};
      double weight = 0.0;
      for (const BBox& ex : exemplar_boxes) {
        try {
          CornerStats stats = fit_corners(match_to_exemplar(members, ex));
          if (stats.degenerate) continue;
          double w = static_cast<double>(stats.count - 1);
          for (int k = 0; k < 4; ++k) {
            pooled_ul[k] += w * stats.cov_ul[k];
            pooled_br[k] += w * stats.cov_br[k];
          }
          weight += w;
        } catch (const InsufficientSamples&) {
        }
      }
      bool have_pool = weight > 0.0;
      if (have_pool)
        for (int k = 0; k < 4; ++k) {
          pooled_ul[k] /= weight;
          pooled_br[k] /= weight;
        }
      for (std::size_t i = 0; i < base.detections.size(); ++i) {
        try {
          CornerStats stats =
              fit_corners(match_to_exemplar(members, base.detections[i]));
          if (stats.degenerate) continue;
          const auto& cov_ul = have_pool ? pooled_ul : stats.cov_ul;
          const auto& cov_br = have_pool ? pooled_br : stats.cov_br;
          ellipses.push_back(ellipse_json(
              static_cast<int>(i), "ul",
              confidence_ellipse(stats.mean_ul, cov_ul, params.alpha)));
          ellipses.push_back(ellipse_json(
              static_cast<int>(i), "br",
              confidence_ellipse(stats.mean_br, cov_br, params.alpha)));
        } catch (const InsufficientSamples&) {
        }
      }
    }

    json metrics = nullptr;
    if (!scene.objects.empty()) {
      std::vector<BBox> gt;
      for (const GtObject& o : scene.objects) gt.push_back(o.box);
      auto [g, p] = apply_exclusion(gt, base.detections, refs, 0.5);
      if (!g.empty()) {
        EvalResult ev = evaluate({g}, {p}, EvalConfig{});
        metrics = json{{"ap", ev.ap}, {"ap50", ev.ap50}, {"ar", ev.ar}};
      }
    }

    io::RunRecord record;
    record.dataset_name = de.ds.name;
    record.layout = layout_name(de.ds.layout);
    record.sampler = params.sampler;
    record.exemplars_per_scene = static_cast<int>(exemplar_boxes.size());
    record.sigma_px = 0.0;
    record.exemplar_seed = 0;
    io::SceneRun sr;
    sr.scene_id = scene.scene_id;
    sr.exemplars = refs;
    sr.detections = base.detections;
    for (const Provenance& p : base.origins)
      sr.origins.push_back(p.exemplar_index);
    record.scenes.push_back(std::move(sr));
    record.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();

    json out;
    out["run_id"] = run_id;
    out["detections"] = detections;
    out["ellipses"] = ellipses;
    out["metrics"] = metrics;
    out["request"] = request;
    out["record"] = json::parse(io::run_to_json(record));
    return out;
  }
};

Service::Service(const ServiceConfig& cfg) : impl_(new Impl(cfg)) {}
Service::~Service() = default;

int Service::load_data() { return impl_->load_data(); }

bool Service::run() {
  return impl_->server.listen("0.0.0.0", impl_->cfg.port);
}

int Service::start_background() {
  int port = impl_->server.bind_to_any_port("127.0.0.1");
  if (port <= 0) return -1;
  impl_->listen_thread =
      std::thread([this]() { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->listen_thread.joinable()) impl_->listen_thread.join();
  impl_->join_workers();
}

}  // namespace exdiff
