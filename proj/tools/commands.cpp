// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>

#include "emoface/image_io.hpp"

namespace emoface::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_split_faces(const fs::path& src_dir, const fs::path& dst_dir,
                       const std::vector<FaceRecord>& faces) {
  fs::create_directories(dst_dir);
  for (const auto& f : faces) {
    const fs::path target = dst_dir / f.image_path;
    fs::create_directories(target.parent_path());
    fs::copy_file(src_dir / f.image_path, target, fs::copy_options::overwrite_existing);
  }
  write_face_corpus(dst_dir / "index.csv", dst_dir / "au.csv", faces);
}

}  // namespace

void prep(const PrepOptions& opt, std::ostream& log) {
  const auto dialogues = load_dialogues(opt.dialogues);
  const auto faces = load_face_corpus(opt.faces_dir / "index.csv", opt.au_csv);
  SplitOptions so;
  so.seed = opt.seed;
  so.context_turns = opt.context_turns;
  so.non_neutral = opt.non_neutral;
  const Splits splits = make_splits(dialogues, faces, so);

  json summary = {{"seed", opt.seed}, {"min_freq", opt.min_freq}, {"context_turns", opt.context_turns}};
  const std::pair<const char*, const DataSplit*> parts[] = {
      {"train", &splits.train}, {"valid", &splits.valid}, {"test", &splits.test}};
  for (const auto& [name, split] : parts) {
    const fs::path dir = opt.out / name;
    fs::create_directories(dir);
    write_dialogues(dir / "dialogues.jsonl", split->dialogues);
    write_split_faces(opt.faces_dir, dir / "faces", split->faces);
    summary[name] = {{"dialogues", split->dialogues.size()},
                     {"examples", split->examples.size()},
                     {"faces", split->faces.size()}};
    log << name << ": " << split->dialogues.size() << " dialogues, " << split->examples.size()
        << " examples, " << split->faces.size() << " faces\n";
  }
  const Vocabulary vocab = build_vocab(splits.train.dialogues, opt.min_freq);
  vocab.save(opt.out / "vocab.txt");
  summary["vocab_size"] = vocab.size();
  std::ofstream(opt.out / "summary.json") << summary.dump(2) << "\n";
  log << "vocabulary: " << vocab.size() << " tokens\n";
}

fs::path training_dir(const fs::path& data_dir) {
  return fs::is_directory(data_dir / "train") ? data_dir / "train" : data_dir;
}

NlgConfig load_nlg_config(const fs::path& path) { return NlgConfig::from_json(read_json(path)); }

FaceGanConfig load_face_config(const fs::path& path) {
  FaceGanConfig c = FaceGanConfig::from_json(read_json(path));
  c.validate();
  return c;
}

NlgData nlg_data(const std::vector<Dialogue>& dialogues, const NlgConfig& cfg) {
  NlgData d;
  d.vocab = build_vocab(dialogues, cfg.min_freq);
  NlgConfig sized = cfg;
  sized.vocab_size = d.vocab.size();
  d.examples = make_nlg_examples(make_examples(dialogues, cfg.context_turns, NonNeutralPolicy::neutral),
                                 d.vocab, sized);
  return d;
}

NlgRun train_nlg_dir(const fs::path& data_dir, NlgConfig cfg, const std::optional<fs::path>& out,
                     std::ostream* log, std::size_t log_every) {
  const auto dialogues = load_dialogues(training_dir(data_dir) / "dialogues.jsonl");
  NlgRun run;
  run.data = nlg_data(dialogues, cfg);
  cfg.vocab_size = run.data.vocab.size();
  cfg.validate();
  run.config = cfg;
  if (log)
    *log << "nlg: " << dialogues.size() << " dialogues, " << run.data.examples.size()
         << " examples, vocabulary " << cfg.vocab_size << "\n";

  NlgModel model(cfg);
  run.history = train_nlg(model, run.data.examples, [&](const NlgEpochMetrics& m) {
    if (!log || (m.epoch + 1) % log_every != 0) return;
    *log << "epoch " << m.epoch + 1 << " tf=" << std::fixed << std::setprecision(3) << m.tf_prob
         << " loss=" << std::setprecision(4) << m.loss << " seq=" << m.seq_ce << " emo=" << m.emo_ce
         << std::defaultfloat << "\n";
  });
  run.train_eval = evaluate_nlg(model, run.data.examples);
  if (log)
    *log << "train: perplexity=" << run.train_eval.perplexity
         << " emotion_accuracy=" << run.train_eval.emotion_accuracy
         << " exact_match=" << run.train_eval.exact_match << "\n";
  if (out) save_nlg_checkpoint(*out, model, run.data.vocab, cfg.epochs);
  return run;
}

NlgEval eval_nlg_dir(const fs::path& checkpoint, const fs::path& dialogues_path) {
  const NlgCheckpoint ck = load_nlg_checkpoint(checkpoint);
  const auto& cfg = ck.model.config();
  const auto dialogues = load_dialogues(dialogues_path);
  const auto examples = make_nlg_examples(
      make_examples(dialogues, cfg.context_turns, NonNeutralPolicy::neutral), ck.vocab, cfg);
  return evaluate_nlg(ck.model, examples);
}

FaceRun train_face_dir(const fs::path& data_dir, const FaceGanConfig& cfg,
                       const std::optional<fs::path>& out, std::ostream* log, std::size_t log_every) {
  const FaceDataset data = load_face_dataset(training_dir(data_dir), cfg.image_size);
  if (log) *log << "face: " << data.images.size() << " images at " << cfg.image_size << "px\n";
  FaceGan gan(cfg);
  FaceRun run;
  run.history = train_face(gan, data, [&](const StepMetrics& m) {
    if (log && (m.step % log_every == 0 || m.step == 1)) *log << "step " << m.to_json().dump() << "\n";
  });
  run.report = evaluate_face_overfit(gan, data);
  if (log)
    *log << "train: condition_error=" << run.report.condition_error
         << " self_reconstruction=" << run.report.self_reconstruction << "\n";
  if (out) save_face_checkpoint(*out, gan, cfg.steps);
  return run;
}

void chat_loop(Pipeline& pipeline, const std::string& face_id, std::istream& in, std::ostream& out,
               const std::optional<fs::path>& dump_dir, bool prompt) {
  const auto session = pipeline.create_session(face_id);
  out << "face " << session->base_face_id << "\n";
  if (dump_dir) {
    fs::create_directories(*dump_dir);
    write_png(*dump_dir / "turn_000.png", session->base_face);
  }
  std::optional<json> next_override;
  std::size_t turn = 0;
  std::string line;
  while (true) {
    if (prompt) out << "> " << std::flush;
    if (!std::getline(in, line)) break;
    if (line.empty()) continue;
    if (line.rfind("/emotion ", 0) == 0) {
      next_override = line.substr(9);
      continue;
    }
    if (line.rfind("/au ", 0) == 0) {
      next_override = json::parse(line.substr(4));
      continue;
    }
    const Reply r = pipeline.respond(session->session_id, line, next_override);
    next_override.reset();
    ++turn;
    out << "[" << to_string(r.emotion) << "] " << r.text << "\n";
    if (dump_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "turn_%03zu.png", turn);
      write_png(*dump_dir / name, r.face);
    }
  }
}

}  // namespace emoface::cli
