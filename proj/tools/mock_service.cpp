// Line-oriented JSON service used in place of the external annotation and
// filter services: one request object per stdin line, one reply per line.
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "surgtag/data_engine.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mock annotation/filter service speaking line-delimited JSON"};
  std::string mode = "vlm";
  std::string fixture;
  std::string stop_phrases;
  int exit_after = -1;
  app.add_option("--mode", mode, "vlm or filter")->check(CLI::IsMember({"vlm", "filter"}));
  app.add_option("--fixture", fixture, "JSON map image_ref -> response (vlm mode); string values are sent verbatim");
  app.add_option("--stop-phrases", stop_phrases, "stop-phrase file (filter mode)");
  app.add_option("--exit-after", exit_after, "exit without replying after this many replies");
  CLI11_PARSE(app, argc, argv);

  nlohmann::json responses = nlohmann::json::object();
  if (!fixture.empty()) {
    std::ifstream in(fixture);
    if (!in) {
      std::cerr << "cannot open fixture " << fixture << "\n";
      return 2;
    }
    responses = nlohmann::json::parse(in);
  }
  auto filter = surgtag::make_stop_phrase_filter(stop_phrases.empty() ? surgtag::default_stop_phrases()
                                                                      : surgtag::read_stop_phrases(stop_phrases));
  int replies = 0;
  for (std::string line; std::getline(std::cin, line);) {
    if (exit_after >= 0 && replies >= exit_after) return 3;
    nlohmann::json req = nlohmann::json::parse(line, nullptr, false);
    nlohmann::json reply;
    if (req.is_discarded() || !req.is_object()) {
      reply = {{"error", "request is not a JSON object"}};
    } else if (mode == "filter") {
      try {
        reply = filter->request(req);
      } catch (const std::exception& e) {
        reply = {{"error", e.what()}};
      }
    } else {
      const std::string ref = req.value("image_ref", "");
      if (!responses.contains(ref)) {
        reply = {{"tags", nlohmann::json::array()}};
      } else if (responses[ref].is_string()) {
        std::cout << responses[ref].get<std::string>() << std::endl;
        ++replies;
        continue;
      } else {
        reply = responses[ref];
      }
    }
    std::cout << reply.dump() << std::endl;
    ++replies;
  }
  return 0;
}
