// Command-line front end. Every configuration key is also a flag, and a TOML
// file given with --config supplies the same keys; flags win over the file.

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "perturbscore/perturbscore.h"

using nlohmann::json;

namespace {

json take_json(ps_status st, char*& raw) {
  if (st != PS_OK) {
    std::fprintf(stderr, "error[%s]: %s\n", ps_status_name(st), ps_last_error());
    std::exit(static_cast<int>(st));
  }
  json j = json::parse(raw);
  ps_string_free(raw);
  raw = nullptr;
  return j;
}

// Keeps the raw string when it does not parse, so that the library reports
// the type error together with every other problem.
json typed(const std::string& type, const std::string& raw) {
  try {
    std::size_t used = 0;
    if (type == "int") {
      const long long v = std::stoll(raw, &used);
      if (used == raw.size()) return v;
    } else if (type == "float") {
      const double v = std::stod(raw, &used);
      if (used == raw.size()) return v;
    } else {
      return raw;
    }
  } catch (const std::exception&) {
  }
  return raw;
}

}  // namespace

int main(int argc, char** argv) {
  char* raw = nullptr;
  ps_status st = ps_config_keys(&raw);
  const json keys = take_json(st, raw);
  st = ps_verbs(&raw);
  const json verbs = take_json(st, raw);

  CLI::App app{"Discrete/continuous perturbation correlation lab"};
  app.set_version_flag("--version", ps_version());
  app.set_config("--config", "", "TOML file with flat configuration keys");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(0, 1);
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every configuration key and exit");

  std::map<std::string, std::string> scalars;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
  for (const auto& k : keys) {
    const std::string name = k["name"], type = k["type"], help = k["help"];
    const std::string flag = "--" + name;
    if (type == "bool") {
      options[name] = app.add_flag(flag, flags[name], help);
    } else if (type == "list") {
      options[name] = app.add_option(flag, lists[name], help)->type_name("PATH");
    } else {
      std::string label = help;
      if (!k["default"].is_null()) label += " [" + k["default"].dump() + "]";
      options[name] = app.add_option(flag, scalars[name], label);
      std::string shown = type;
      for (auto& ch : shown) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      options[name]->type_name(shown);
    }
  }
  for (const std::string verb : verbs) app.add_subcommand(verb, "run the " + verb + " stage")->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (list_keys) {
    for (const auto& k : keys) {
      std::printf("%-28s %-7s %-12s %s\n", k["name"].get<std::string>().c_str(),
                  k["type"].get<std::string>().c_str(), k["default"].dump().c_str(),
                  k["help"].get<std::string>().c_str());
    }
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::fprintf(stderr, "%s", app.help().c_str());
    return static_cast<int>(PS_ERR_INVALID_ARGUMENT);
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  json config = json::object();
  for (const auto& k : keys) {
    const std::string name = k["name"], type = k["type"];
    if (options[name]->count() == 0) continue;
    if (type == "bool") config[name] = flags[name];
    else if (type == "list") config[name] = lists[name];
    else config[name] = typed(type, scalars[name]);
  }

  st = ps_run_command(verb.c_str(), config.dump().c_str(), &raw);
  const json summary = take_json(st, raw);
  std::printf("%s\n", summary.dump(2).c_str());
  return 0;
}
