#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "exdiff/io.hpp"
#include "exdiff/kernels.hpp"
#include "exdiff/runner.hpp"
#include "exdiff/service.hpp"
#include "json.hpp"

namespace {

using namespace exdiff;

struct CommonFlags {
  ExperimentConfig cfg;
  int jobs = 1;
};

void add_sampler_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--n", flags.cfg.sampler.n, "Random proposals per scene");
  cmd->add_option("--n-star", flags.cfg.exemplars_per_scene,
                  "Exemplars injected per scene (0 = baseline)");
  cmd->add_option("--copies", flags.cfg.sampler.copies,
                  "Proposals per exemplar");
  cmd->add_option("--tau", flags.cfg.sampler.tau,
                  "Forward-noising step applied to exemplars");
  cmd->add_option("--steps", flags.cfg.sampler.num_steps,
                  "Denoising iterations");
  cmd->add_option("--t-start", flags.cfg.sampler.t_start,
                  "Schedule length / first timestep");
  cmd->add_option("--renew-threshold", flags.cfg.sampler.renew_threshold,
                  "Score below which proposals are renewed");
  cmd->add_option("--signal-scale", flags.cfg.sampler.signal_scale,
                  "Box-to-signal scaling factor");
  cmd->add_option(
         "--schedule",
         [&flags](const std::vector<std::string>& v) {
           if (v[0] == "cosine")
             flags.cfg.sampler.schedule_kind = ScheduleKind::kCosine;
           else if (v[0] == "linear")
             flags.cfg.sampler.schedule_kind = ScheduleKind::kLinear;
           else
             return false;
           return true;
         },
         "Noise schedule: cosine|linear")
      ->type_name("TEXT");
  cmd->add_option("--seed", flags.cfg.sampler.seed, "Sampler seed");
  cmd->add_option("--exemplar-seed", flags.cfg.exemplar_seed,
                  "Exemplar selection seed (independent of --seed)");
  cmd->add_option("--sigma-px", flags.cfg.sigma_px,
                  "Gaussian noise on exemplar boxes, in pixels");
  cmd->add_option("--jobs", flags.jobs, "Worker cap for scene parallelism");
  cmd->add_option("--oracle-radius", flags.cfg.oracle.attraction_radius,
                  "Oracle attraction radius (diagonal fraction)");
  cmd->add_option("--oracle-noise", flags.cfg.oracle.detector_noise,
                  "Oracle per-coordinate detection noise");
  cmd->add_option("--oracle-context", flags.cfg.oracle.context_gain,
                  "Oracle context gain");
  cmd->add_option("--oracle-slope", flags.cfg.oracle.base_score_slope,
                  "Oracle score slope");
}

Dataset load_dataset_any(const std::string& path, bool coco) {
  return coco ? io::load_coco(path) : io::load_dataset(path);
}

void print_metrics(const io::RunRecord& record) {
  std::cout << "scenes=" << record.scenes.size();
  if (record.metrics.present) {
    std::cout << " AP=" << io::format_double(record.metrics.ap)
              << " AP50=" << io::format_double(record.metrics.ap50)
              << " AR=" << io::format_double(record.metrics.ar)
              << " H=" << io::format_double(record.metrics.entropy_h);
  }
  std::cout << "\n";
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Exemplar-conditioned diffusion detection harness"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset file");
  std::string gen_layout = "uniform";
  WorldConfig world;
  std::string gen_out;
  gen->add_option("--layout", gen_layout,
                  "grid-arc|grid-column|uniform")
      ->required();
  gen->add_option("--scenes", world.num_scenes, "Number of scenes")->required();
  gen->add_option("--objects", world.objects_per_scene, "Objects per scene");
  gen->add_option("--classes", world.num_classes, "Number of classes");
  gen->add_option("--jitter", world.jitter, "Positional noise level");
  gen->add_option("--seed", world.seed, "Generator seed");
  gen->add_option("--width", world.width, "Reference width in pixels");
  gen->add_option("--height", world.height, "Reference height in pixels");
  gen->add_option("--out", gen_out, "Output dataset path")->required();

  // sample
  auto* sample = app.add_subcommand(
      "sample", "Run exemplar-conditioned sampling over a dataset");
  CommonFlags sf;
  std::string sample_dataset, sample_out;
  bool sample_coco = false;
  sample->add_option("--dataset", sample_dataset, "Dataset file")->required();
  sample->add_flag("--coco", sample_coco, "Dataset is COCO-style");
  sample->add_option("--out", sample_out, "Run record path")->required();
  add_sampler_flags(sample, sf);

  // sweep
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Repeat sample+eval over parameter values");
  CommonFlags wf;
  std::string sweep_dataset, sweep_param, sweep_out;
  std::vector<double> sweep_values;
  bool sweep_coco = false;
  sweep_cmd->add_option("--dataset", sweep_dataset, "Dataset file")
      ->required();
  sweep_cmd->add_flag("--coco", sweep_coco, "Dataset is COCO-style");
  sweep_cmd->add_option("--param", sweep_param,
                        "n_star|tau|copies|sigma_px")
      ->required();
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated values")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--out", sweep_out, "CSV path (stdout if omitted)");
  add_sampler_flags(sweep_cmd, wf);

  // eval
  auto* eval_cmd =
      app.add_subcommand("eval", "Score a stored run against its dataset");
  std::string eval_run, eval_dataset, eval_out;
  bool eval_coco = false;
  eval_cmd->add_option("--run", eval_run, "Run record path")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset file")->required();
  eval_cmd->add_flag("--coco", eval_coco, "Dataset is COCO-style");
  eval_cmd->add_option("--out", eval_out, "CSV path (stdout if omitted)");

  // uncertainty
  auto* unc = app.add_subcommand(
      "uncertainty", "Ensemble calibration and confidence ellipses");
  CommonFlags uf;
  uf.cfg.exemplars_per_scene = 1;
  std::string unc_dataset, unc_out;
  bool unc_coco = false;
  int unc_ensemble = 100;
  double unc_alpha = 0.95;
  int unc_max_scenes = 0;
  unc->add_option("--dataset", unc_dataset, "Dataset file")->required();
  unc->add_flag("--coco", unc_coco, "Dataset is COCO-style");
  unc->add_option("--ensemble", unc_ensemble, "Ensemble size");
  unc->add_option("--alpha", unc_alpha, "Confidence level");
  unc->add_option("--max-scenes", unc_max_scenes,
                  "Use only the first N scenes (0 = all)");
  unc->add_option("--out", unc_out, "Ellipse/coverage JSON path");
  add_sampler_flags(unc, uf);

  // serve
  auto* serve = app.add_subcommand("serve", "Start the HTTP API");
  ServiceConfig service_cfg;
  serve->add_option("--port", service_cfg.port, "Listen port");
  serve->add_option("--data", service_cfg.data_dir, "Dataset directory")
      ->required();
  serve->add_option("--sync-limit", service_cfg.sync_ensemble_limit,
                    "Largest ensemble served synchronously");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems exit 1; --help exits 0
  }

  if (gen->parsed()) {
    world.layout = layout_from_name(gen_layout);
    Dataset ds = generate_dataset(world);
    io::save_dataset(gen_out, ds);
    std::cout << "wrote " << gen_out << " (" << ds.scenes.size()
              << " scenes)\n";
    return 0;
  }

  if (sample->parsed()) {
    set_max_jobs(sf.jobs);
    sf.cfg.jobs = sf.jobs;
    Dataset ds = load_dataset_any(sample_dataset, sample_coco);
    io::RunRecord record = run_dataset(ds, sf.cfg);
    attach_metrics(ds, record);
    io::save_run(sample_out, record);
    print_metrics(record);
    std::cout << "wrote " << sample_out << "\n";
    return 0;
  }

  if (sweep_cmd->parsed()) {
    set_max_jobs(wf.jobs);
    wf.cfg.jobs = wf.jobs;
    Dataset ds = load_dataset_any(sweep_dataset, sweep_coco);
    std::vector<SweepRow> rows = sweep(ds, wf.cfg, sweep_param, sweep_values);
    std::string table = csv_table(rows);
    if (sweep_out.empty()) {
      std::cout << table;
    } else {
      std::ofstream out(sweep_out, std::ios::binary | std::ios::trunc);
      if (!out) throw io::IoError("cannot open " + sweep_out);
      out << table;
      std::cout << "wrote " << sweep_out << "\n";
    }
    return 0;
  }

  if (eval_cmd->parsed()) {
    Dataset ds = load_dataset_any(eval_dataset, eval_coco);
    io::RunRecord record = io::load_run(eval_run);
    EvalResult res = evaluate_run(ds, record);
    std::vector<BBox> boxes;
    for (const Scene& s : ds.scenes)
      for (const GtObject& o : s.objects) boxes.push_back(o.box);
    double entropy_h = spatial_entropy(boxes, 16);
    SweepRow row;
    row.dataset = ds.name;
    row.seed = record.sampler.seed;
    row.exemplars = record.exemplars_per_scene;
    row.copies = record.sampler.copies;
    row.tau = record.sampler.tau;
    row.sigma_px = record.sigma_px;
    row.ap = res.ap;
    row.ap50 = res.ap50;
    row.ar = res.ar;
    std::string table = csv_table({row});
    std::cout << "H=" << io::format_double(entropy_h) << "\n";
    if (eval_out.empty()) {
      std::cout << table;
    } else {
      std::ofstream out(eval_out, std::ios::binary | std::ios::trunc);
      if (!out) throw io::IoError("cannot open " + eval_out);
      out << table;
      std::cout << "wrote " << eval_out << "\n";
    }
    return 0;
  }

  if (unc->parsed()) {
    set_max_jobs(uf.jobs);
    uf.cfg.jobs = uf.jobs;
    Dataset ds = load_dataset_any(unc_dataset, unc_coco);
    if (unc_max_scenes > 0 &&
        unc_max_scenes < static_cast<int>(ds.scenes.size()))
      ds.scenes.resize(unc_max_scenes);
    CalibrationOutcome outcome =
        calibrate_dataset(ds, uf.cfg, unc_ensemble, unc_alpha);
    std::cout << "scenes=" << outcome.per_scene_coverage.size()
              << " skipped=" << outcome.scenes_skipped << " median_coverage="
              << io::format_double(outcome.median_coverage)
              << " calibration_error="
              << io::format_double(outcome.error_points) << "\n";
    if (!unc_out.empty()) {
      nlohmann::json j;
      j["alpha"] = unc_alpha;
      j["ensemble"] = unc_ensemble;
      j["per_scene_coverage"] = outcome.per_scene_coverage;
      j["median_coverage"] = outcome.median_coverage;
      j["calibration_error"] = outcome.error_points;
      j["scenes_skipped"] = outcome.scenes_skipped;
      nlohmann::json ellipses = nlohmann::json::array();
      for (const auto& [scene_id, pair] : outcome.ellipses) {
        const char* corner_names[2] = {"ul", "br"};
        for (int c = 0; c < 2; ++c) {
          const Ellipse& e = pair[c];
          ellipses.push_back({{"scene_id", scene_id},
                              {"corner", corner_names[c]},
                              {"center", {e.center[0], e.center[1]}},
                              {"axes", {e.a, e.b}},
                              {"angle_rad", e.angle_rad},
                              {"alpha", e.alpha}});
        }
      }
      j["ellipses"] = ellipses;
      std::ofstream out(unc_out, std::ios::binary | std::ios::trunc);
      if (!out) throw io::IoError("cannot open " + unc_out);
      out << j.dump(2) << "\n";
      std::cout << "wrote " << unc_out << "\n";
    }
    return 0;
  }

  if (serve->parsed()) {
    Service service(service_cfg);
    int loaded = service.load_data();
    std::cout << "loaded " << loaded << " dataset(s) from "
              << service_cfg.data_dir << "\n";
    std::cout << "listening on port " << service_cfg.port << "\n";
    if (!service.run()) throw std::runtime_error("failed to bind port");
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const exdiff::io::IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
}
