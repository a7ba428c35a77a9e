// nerf: gen-scene | confidence | train | render | extract | eval
//
// Every flag is also a config-file key (`--config file`, lines `key = value`).
// Flags given on the command line win over the file.

#include "pipeline.hpp"

#include "nerf/dataset.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <set>
#include <type_traits>

namespace pl = nerf::pipeline;

namespace {

template <typename Options>
struct Command {
  Options options;
  CLI::App* app = nullptr;
  std::string config;

  Command(CLI::App& parent, const char* name, const char* description) {
    app = parent.add_subcommand(name, description);
    options.visit([&](const char* key, auto& value, const char* help, bool required = false) {
      const std::string flag = std::string("--") + key;
      using T = std::decay_t<decltype(value)>;
      CLI::Option* opt;
      if constexpr (std::is_same_v<T, bool>) {
        opt = app->add_flag(flag + ",!--no-" + key, value, help);
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        opt = app->add_option(flag, value, help)->delimiter(',')->capture_default_str();
      } else {
        opt = app->add_option(flag, value, help)->capture_default_str();
      }
      if (required) opt->required();
    });
    app->add_option("--config", config, "key = value file; keys are the long flag names");
  }
};

/// Appends `--key=value` for each config-file entry whose flag is not on the command line.
std::vector<std::string> merge_config(CLI::App& root, std::vector<std::string> args) {
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  for (CLI::App* s : root.get_subcommands([](CLI::App*) { return true; }))
    if (s->get_name() == args[0]) sub = s;
  if (!sub) return args;

  std::string file;
  std::set<std::string> given;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) continue;
    std::string name = a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2);
    if (name.rfind("no-", 0) == 0) name = name.substr(3);
    given.insert(name);
    if (name == "config") file = a.find('=') != std::string::npos ? a.substr(a.find('=') + 1)
                                 : i + 1 < args.size()          ? args[i + 1]
                                                                : "";
  }
  if (file.empty()) return args;
  for (const auto& [key, value] : nerf::read_key_values(file)) {
    if (key == "config" || !sub->get_option_no_throw("--" + key))
      throw pl::UsageError("config " + file + ": unknown key '" + key + "' for " + sub->get_name());
    if (!given.count(key)) args.push_back("--" + key + "=" + value);
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App root{"Geometry-supervised radiance field reconstruction"};
  root.require_subcommand(1);
  root.failure_message([](const CLI::App*, const CLI::Error& e) { return std::string(e.what()); });

  Command<pl::GenSceneOptions> gen(root, "gen-scene", "write a synthetic dataset with exact priors");
  Command<pl::ConfidenceOptions> conf(root, "confidence", "compute per-pixel prior confidence maps");
  Command<pl::TrainOptions> train(root, "train", "optimize the radiance field");
  Command<pl::RenderOptions> render(root, "render", "render color, depth and normal images");
  Command<pl::ExtractOptions> extract(root, "extract", "extract a mesh with marching cubes");
  Command<pl::EvalOptions> eval(root, "eval", "score test views and a mesh");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(root, args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    root.parse(args);

    if (*gen.app) pl::gen_scene(gen.options);
    if (*conf.app) pl::confidence(conf.options);
    if (*train.app) pl::train(train.options);
    if (*render.app) pl::render(render.options);
    if (*extract.app) pl::extract(extract.options);
    if (*eval.app) pl::eval(eval.options);
  } catch (const CLI::CallForHelp& e) {
    return root.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return root.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << " (see --help)\n";
    return 2;
  } catch (const pl::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
