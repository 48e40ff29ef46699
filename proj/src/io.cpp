#include "exdiff/io.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace exdiff::io {

using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void check_version(const json& j, const std::string& path) {
  int version = j.value("format_version", -1);
  if (version != kFormatVersion)
    throw IoError(path + ": format_version " + std::to_string(version) +
                  " is incompatible with supported version " +
                  std::to_string(kFormatVersion));
}

void validate_box(const BBox& b, const std::string& where) {
  if (!(b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 && b.cy <= 1.0))
    throw IoError(where + ": box center outside [0, 1]");
  if (!(b.w > 0.0 && b.w <= 1.0 && b.h > 0.0 && b.h <= 1.0))
    throw IoError(where + ": box dimensions outside (0, 1]");
  if (b.class_id < 0) throw IoError(where + ": negative class_id");
}

json bbox_to_json(const BBox& b) { return json{b.cx, b.cy, b.w, b.h}; }

BBox bbox_from_json(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.size() != 4)
    throw IoError(where + ": bbox must be a 4-element array");
  BBox b;
  b.cx = arr[0].get<double>();
  b.cy = arr[1].get<double>();
  b.w = arr[2].get<double>();
  b.h = arr[3].get<double>();
  return b;
}

}  // namespace

std::string format_double(double v) { return json(v).dump(); }

void save_dataset(const std::string& path, const Dataset& ds) {
  json j;
  j["format_version"] = kFormatVersion;
  j["meta"] = {{"name", ds.name},        {"width", ds.width},
               {"height", ds.height},    {"layout", layout_name(ds.layout)},
               {"seed", ds.seed},        {"jitter", ds.jitter},
               {"num_classes", ds.num_classes}};
  json scenes = json::array();
  for (const Scene& scene : ds.scenes) {
    json objects = json::array();
    for (const GtObject& obj : scene.objects)
      objects.push_back({{"bbox", bbox_to_json(obj.box)},
                         {"class_id", obj.box.class_id},
                         {"visibility", obj.visibility}});
    scenes.push_back({{"scene_id", scene.scene_id},
                      {"width", scene.width},
                      {"height", scene.height},
                      {"objects", objects}});
  }
  j["scenes"] = scenes;
  write_text_file(path, j.dump(2) + "\n");
}

Dataset load_dataset(const std::string& path) {
  json j = read_json_file(path);
  check_version(j, path);
  Dataset ds;
  try {
    const json& meta = j.at("meta");
    ds.name = meta.at("name").get<std::string>();
    ds.width = meta.at("width").get<int>();
    ds.height = meta.at("height").get<int>();
    ds.layout = layout_from_name(meta.at("layout").get<std::string>());
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.jitter = meta.value("jitter", 0.0);
    ds.num_classes = meta.value("num_classes", 1);
    for (const json& js : j.at("scenes")) {
      Scene scene;
      scene.scene_id = js.at("scene_id").get<int>();
      scene.width = js.value("width", ds.width);
      scene.height = js.value("height", ds.height);
      int obj_idx = 0;
      for (const json& jo : js.at("objects")) {
        GtObject obj;
        std::string where = path + ": scene " +
                            std::to_string(scene.scene_id) + " object " +
                            std::to_string(obj_idx);
        obj.box = bbox_from_json(jo.at("bbox"), where);
        obj.box.class_id = jo.at("class_id").get<int>();
        obj.visibility = jo.at("visibility").get<double>();
        validate_box(obj.box, where);
        if (!(obj.visibility >= 0.0 && obj.visibility <= 1.0))
          throw IoError(where + ": visibility outside [0, 1]");
        if (obj.box.class_id >= ds.num_classes)
          throw IoError(where + ": class_id exceeds num_classes");
        scene.objects.push_back(obj);
        ++obj_idx;
      }
      ds.scenes.push_back(std::move(scene));
    }
  } catch (const json::exception& e) {
    throw IoError(path + ": invalid dataset file: " + e.what());
  }
  return ds;
}

Dataset load_coco(const std::string& path) {
  json j = read_json_file(path);
  Dataset ds;
  ds.name = std::filesystem::path(path).stem().string();
  ds.layout = Layout::kExternal;
  ds.seed = 0;
  ds.jitter = 0.0;
  try {
    if (!j.contains("images") || !j.contains("annotations") ||
        !j.contains("categories"))
      throw IoError(path +
                    ": COCO file needs images, annotations and categories");

    std::map<int, int> class_of_category;
    for (const json& jc : j.at("categories"))
      class_of_category[jc.at("id").get<int>()] = 0;
    int next = 0;
    for (auto& [cat, cls] : class_of_category) cls = next++;
    ds.num_classes = std::max(1, next);

    std::map<int, Scene> scenes;  // ordered by image id
    for (const json& ji : j.at("images")) {
      Scene scene;
      scene.scene_id = ji.at("id").get<int>();
      scene.width = ji.at("width").get<int>();
      scene.height = ji.at("height").get<int>();
      if (scene.width <= 0 || scene.height <= 0)
        throw IoError(path + ": image " + std::to_string(scene.scene_id) +
                      " has zero dimension");
      scenes[scene.scene_id] = scene;
    }
    for (const json& ja : j.at("annotations")) {
      int image_id = ja.at("image_id").get<int>();
      auto it = scenes.find(image_id);
      if (it == scenes.end())
        throw IoError(path + ": annotation references unknown image " +
                      std::to_string(image_id));
      const json& bb = ja.at("bbox");
      if (!bb.is_array() || bb.size() != 4)
        throw IoError(path + ": annotation bbox must be [x, y, w, h]");
      double x = bb[0].get<double>();
      double y = bb[1].get<double>();
      double w = bb[2].get<double>();
      double h = bb[3].get<double>();
      int category = ja.at("category_id").get<int>();
      auto cit = class_of_category.find(category);
      if (cit == class_of_category.end())
        throw IoError(path + ": annotation references unknown category " +
                      std::to_string(category));
      GtObject obj;
      obj.box.cx = (x + w / 2.0) / it->second.width;
      obj.box.cy = (y + h / 2.0) / it->second.height;
      obj.box.w = w / it->second.width;
      obj.box.h = h / it->second.height;
      obj.box.class_id = cit->second;
      obj.visibility = 1.0;
      validate_box(obj.box, path + ": annotation for image " +
                                std::to_string(image_id));
      it->second.objects.push_back(obj);
    }
    if (scenes.empty()) throw IoError(path + ": COCO file has no images");
    ds.width = scenes.begin()->second.width;
    ds.height = scenes.begin()->second.height;
    for (auto& [id, scene] : scenes) {
      if (scene.objects.empty())
        std::cerr << "warning: " << path << ": image " << id
                  << " has no annotations\n";
      ds.scenes.push_back(std::move(scene));
    }
  } catch (const json::exception& e) {
    throw IoError(path + ": invalid COCO file: " + e.what());
  }
  return ds;
}

namespace {

json sampler_to_json(const SamplerConfig& cfg) {
  return json{{"n", cfg.n},
              {"copies", cfg.copies},
              {"tau", cfg.tau},
              {"num_steps", cfg.num_steps},
              {"t_start", cfg.t_start},
              {"renew_threshold", cfg.renew_threshold},
              {"signal_scale", cfg.signal_scale},
              {"nms_iou", cfg.nms_iou},
              {"schedule",
               cfg.schedule_kind == ScheduleKind::kCosine ? "cosine" : "linear"},
              {"seed", cfg.seed}};
}

SamplerConfig sampler_from_json(const json& j) {
  SamplerConfig cfg;
  cfg.n = j.at("n").get<int>();
  cfg.copies = j.at("copies").get<int>();
  cfg.tau = j.at("tau").get<int>();
  cfg.num_steps = j.at("num_steps").get<int>();
  cfg.t_start = j.at("t_start").get<int>();
  cfg.renew_threshold = j.at("renew_threshold").get<double>();
  cfg.signal_scale = j.at("signal_scale").get<double>();
  cfg.nms_iou = j.at("nms_iou").get<double>();
  std::string kind = j.at("schedule").get<std::string>();
  if (kind == "cosine")
    cfg.schedule_kind = ScheduleKind::kCosine;
  else if (kind == "linear")
    cfg.schedule_kind = ScheduleKind::kLinear;
  else
    throw IoError("unknown schedule kind: " + kind);
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json record_to_json_value(const RunRecord& r) {
  json j;
  j["format_version"] = r.format_version;
  j["dataset_name"] = r.dataset_name;
  j["layout"] = r.layout;
  j["config"] = sampler_to_json(r.sampler);
  j["oracle"] = {{"attraction_radius", r.oracle.attraction_radius},
                 {"detector_noise", r.oracle.detector_noise},
                 {"context_gain", r.oracle.context_gain},
                 {"base_score_slope", r.oracle.base_score_slope}};
  j["n_star"] = r.exemplars_per_scene;
  j["sigma_px"] = r.sigma_px;
  j["exemplar_seed"] = r.exemplar_seed;
  json scenes = json::array();
  for (const SceneRun& sr : r.scenes) {
    json exemplars = json::array();
    for (const ExemplarRef& ex : sr.exemplars)
      exemplars.push_back({{"gt_index", ex.gt_index},
                           {"bbox", bbox_to_json(ex.box)},
                           {"class_id", ex.box.class_id}});
    json dets = json::array();
    for (std::size_t i = 0; i < sr.detections.size(); ++i) {
      const BBox& d = sr.detections[i];
      dets.push_back({{"bbox", bbox_to_json(d)},
                      {"class_id", d.class_id},
                      {"score", d.score},
                      {"origin", sr.origins[i]}});
    }
    scenes.push_back({{"scene_id", sr.scene_id},
                      {"exemplars", exemplars},
                      {"detections", dets}});
  }
  j["scenes"] = scenes;
  if (r.metrics.present)
    j["metrics"] = {{"ap", r.metrics.ap},
                    {"ap50", r.metrics.ap50},
                    {"ar", r.metrics.ar},
                    {"entropy_h", r.metrics.entropy_h}};
  else
    j["metrics"] = nullptr;
  j["wall_clock_sec"] = r.wall_clock_sec;
  return j;
}

RunRecord record_from_json_value(const json& j, const std::string& where) {
  check_version(j, where);
  RunRecord r;
  try {
    r.dataset_name = j.at("dataset_name").get<std::string>();
    r.layout = j.at("layout").get<std::string>();
    r.sampler = sampler_from_json(j.at("config"));
    const json& jo = j.at("oracle");
    r.oracle.attraction_radius = jo.at("attraction_radius").get<double>();
    r.oracle.detector_noise = jo.at("detector_noise").get<double>();
    r.oracle.context_gain = jo.at("context_gain").get<double>();
    r.oracle.base_score_slope = jo.at("base_score_slope").get<double>();
    r.exemplars_per_scene = j.at("n_star").get<int>();
    r.sigma_px = j.at("sigma_px").get<double>();
    r.exemplar_seed = j.at("exemplar_seed").get<std::uint64_t>();
    for (const json& js : j.at("scenes")) {
      SceneRun sr;
      sr.scene_id = js.at("scene_id").get<int>();
      for (const json& je : js.at("exemplars")) {
        ExemplarRef ex;
        ex.gt_index = je.at("gt_index").get<int>();
        ex.box = bbox_from_json(je.at("bbox"), where + ": exemplar");
        ex.box.class_id = je.at("class_id").get<int>();
        sr.exemplars.push_back(ex);
      }
      for (const json& jd : js.at("detections")) {
        BBox d = bbox_from_json(jd.at("bbox"), where + ": detection");
        d.class_id = jd.at("class_id").get<int>();
        d.score = jd.at("score").get<double>();
        sr.detections.push_back(d);
        sr.origins.push_back(jd.at("origin").get<int>());
      }
      r.scenes.push_back(std::move(sr));
    }
    const json& jm = j.at("metrics");
    if (!jm.is_null()) {
      r.metrics.present = true;
      r.metrics.ap = jm.at("ap").get<double>();
      r.metrics.ap50 = jm.at("ap50").get<double>();
      r.metrics.ar = jm.at("ar").get<double>();
      r.metrics.entropy_h = jm.at("entropy_h").get<double>();
    }
    r.wall_clock_sec = j.at("wall_clock_sec").get<double>();
  } catch (const json::exception& e) {
    throw IoError(where + ": invalid run record: " + e.what());
  }
  return r;
}

}  // namespace

void save_run(const std::string& path, const RunRecord& record) {
  write_text_file(path, record_to_json_value(record).dump(2) + "\n");
}

RunRecord load_run(const std::string& path) {
  json j = read_json_file(path);
  return record_from_json_value(j, path);
}

std::string run_to_json(const RunRecord& record) {
  return record_to_json_value(record).dump(2) + "\n";
}

RunRecord run_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("malformed run record JSON: ") + e.what());
  }
  return record_from_json_value(j, "run record");
}

std::string canonical_run_json(RunRecord record) {
  record.wall_clock_sec = 0.0;
  return record_to_json_value(record).dump();
}

}  // namespace exdiff::io
