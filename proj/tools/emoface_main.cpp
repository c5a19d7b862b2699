// SPDX-License-Identifier: Apache-2.0
#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "emoface/image_io.hpp"
#include "emoface/server.hpp"
#include "emoface/synthetic.hpp"

using namespace emoface;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

HttpService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

json parse_au_argument(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{') return json::parse(arg);
  if (fs::is_regular_file(arg)) {
    std::ifstream in(arg);
    return json::parse(in);
  }
  return arg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotional dialogue with synthesized facial expressions"};
  app.require_subcommand(1);

  cli::PrepOptions prep_opt;
  std::string non_neutral = "neutral";
  auto* prep = app.add_subcommand("prep", "Validate, align and split the dialogue and face corpora");
  prep->add_option("--dialogues", prep_opt.dialogues, "dialogues.jsonl")->required();
  prep->add_option("--faces", prep_opt.faces_dir, "Face directory holding index.csv and the images")->required();
  prep->add_option("--au", prep_opt.au_csv, "AU intensity CSV")->required();
  prep->add_option("--out", prep_opt.out, "Output directory")->required();
  prep->add_option("--seed", prep_opt.seed, "Split seed");
  prep->add_option("--min-freq", prep_opt.min_freq, "Vocabulary frequency cutoff");
  prep->add_option("--context-turns", prep_opt.context_turns, "Turns of context per example");
  prep->add_option("--non-neutral", non_neutral, "neutral | contemptuous | drop");

  fs::path data, config, out, checkpoint, image, dialogues;
  auto* train_nlg_cmd = app.add_subcommand("train-nlg", "Train the response and emotion model");
  train_nlg_cmd->add_option("--data", data)->required();
  train_nlg_cmd->add_option("--config", config)->required();
  train_nlg_cmd->add_option("--out", out)->required();

  std::string split = "test";
  auto* eval_nlg = app.add_subcommand("eval-nlg", "Report perplexity and emotion accuracy");
  eval_nlg->add_option("--checkpoint", checkpoint)->required();
  eval_nlg->add_option("--data", data, "Prep output directory or dialogues.jsonl")->required();
  eval_nlg->add_option("--split", split, "Split to evaluate when --data is a prep directory");

  fs::path table_path;
  auto* validate = app.add_subcommand("validate-au-table", "Check an emotion to AU table");
  validate->add_option("file", table_path)->required();

  auto* train_face_cmd = app.add_subcommand("train-face", "Train the face expression GAN");
  train_face_cmd->add_option("--data", data)->required();
  train_face_cmd->add_option("--config", config)->required();
  train_face_cmd->add_option("--out", out)->required();

  std::string au_arg;
  auto* synth = app.add_subcommand("synthesize", "Edit a face towards an emotion or AU vector");
  synth->add_option("--checkpoint", checkpoint)->required();
  synth->add_option("--image", image)->required();
  synth->add_option("--au", au_arg, "Emotion name, AU JSON object or AU JSON file")->required();
  synth->add_option("--au-table", table_path, "Emotion to AU table (default: built-in)");
  synth->add_option("--out", out)->required();

  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", config)->required();
  serve->add_option("--port", port);

  std::string face_id = "random";
  fs::path dump_dir;
  bool no_prompt = false;
  auto* chat = app.add_subcommand("chat", "Terminal chat, one line per turn");
  chat->add_option("--config", config)->required();
  chat->add_option("--face", face_id, "Base face id or \"random\"");
  chat->add_option("--dump-dir", dump_dir, "Write one PNG per turn here");
  chat->add_flag("--no-prompt", no_prompt);

  std::size_t size = 64;
  auto* make_syn = app.add_subcommand("make-synthetic", "Write the synthetic dialogue and face corpora");
  make_syn->add_option("--out", out)->required();
  make_syn->add_option("--size", size, "Face image size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prep) {
      const auto policy = parse_non_neutral_policy(non_neutral);
      if (!policy) throw std::invalid_argument("--non-neutral must be neutral, contemptuous or drop");
      prep_opt.non_neutral = *policy;
      cli::prep(prep_opt, std::cout);
    } else if (*train_nlg_cmd) {
      cli::train_nlg_dir(data, cli::load_nlg_config(config), out, &std::cout);
    } else if (*eval_nlg) {
      const fs::path path = fs::is_directory(data) ? data / split / "dialogues.jsonl" : data;
      const NlgEval e = cli::eval_nlg_dir(checkpoint, path);
      std::cout << "perplexity " << e.perplexity << "\nemotion_accuracy " << e.emotion_accuracy
                << "\nexact_match " << e.exact_match << "\n";
    } else if (*validate) {
      const auto problems = validate_table(AuTableSource::load(table_path));
      for (const auto& p : problems) std::cout << p << "\n";
      if (!problems.empty()) return 1;
      std::cout << "ok\n";
    } else if (*train_face_cmd) {
      cli::train_face_dir(data, cli::load_face_config(config), out, &std::cout);
    } else if (*synth) {
      const FaceCheckpoint ck = load_face_checkpoint(checkpoint);
      const AuTable table = table_path.empty() ? AuTable::defaults() : AuTable::load(table_path);
      const FaceTarget target = FaceTarget::parse(parse_au_argument(au_arg), table);
      write_png(out, synthesize(*ck.generator, read_png(image), target.au));
    } else if (*serve) {
      const ServiceConfig cfg = ServiceConfig::load(config);
      Pipeline pipeline(cfg);
      HttpService service(pipeline);
      const int bound = service.bind(cfg.host, port);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << cfg.host << ":" << bound << std::endl;
      service.run();
    } else if (*chat) {
      Pipeline pipeline(ServiceConfig::load(config));
      std::optional<fs::path> dump;
      if (!dump_dir.empty()) dump = dump_dir;
      cli::chat_loop(pipeline, face_id, std::cin, std::cout, dump, !no_prompt);
    } else if (*make_syn) {
      synthetic::write_corpus(out, size);
      std::cout << "wrote " << out.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
