#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "agsa/envsim.hpp"
#include "agsa/error.hpp"

namespace agsa::env {

using nlohmann::json;

EpisodeRecord TrajectoryRecord::to_episode_record() const {
  EpisodeRecord r;
  r.shortest = shortest;
  r.min_actions = min_actions;
  r.actions = static_cast<int>(steps.size());
  Cell prev = start.pos;
  for (const auto& s : steps) {
    const Cell c{s.x, s.y};
    if (!(c == prev)) ++r.path_length;
    prev = c;
  }
  r.success = !steps.empty() && steps.back().action == Action::kStop && steps.back().d_geo == 0;
  return r;
}

void write_trajectory(std::ostream& os, const TrajectoryRecord& record) {
  json start = {{"event", "episode_start"},
                {"episode", record.episode},
                {"map", record.map_name},
                {"x", record.start.pos.x},
                {"y", record.start.pos.y},
                {"heading", heading_name(record.start.heading)},
                {"source_x", record.source.x},
                {"source_y", record.source.y},
                {"d_geo", record.shortest},
                {"min_actions", record.min_actions}};
  os << start.dump() << '\n';
  for (const auto& s : record.steps) {
    json step = {{"t", s.t},
                 {"x", s.x},
                 {"y", s.y},
                 {"heading", heading_name(s.heading)},
                 {"action", action_name(s.action)},
                 {"reward", s.reward},
                 {"d_geo", s.d_geo}};
    os << step.dump() << '\n';
  }
  json end = {{"event", "episode_end"},
              {"episode", record.episode},
              {"success", record.success},
              {"spl", record.spl},
              {"sna", record.sna}};
  os << end.dump() << '\n';
}

std::vector<TrajectoryRecord> read_trajectories(std::istream& is) {
  std::vector<TrajectoryRecord> out;
  std::string line;
  int line_no = 0;
  bool open = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid log record: ") + e.what(), line_no);
    }
    try {
      if (j.contains("event")) {
        const auto event = j.at("event").get<std::string>();
        if (event == "episode_start") {
          TrajectoryRecord r;
          r.episode = j.at("episode").get<int>();
          r.map_name = j.value("map", "");
          r.start.pos = {j.at("x").get<int>(), j.at("y").get<int>()};
          r.start.heading = parse_heading(j.at("heading").get<std::string>());
          r.source = {j.at("source_x").get<int>(), j.at("source_y").get<int>()};
          r.shortest = j.at("d_geo").get<int>();
          r.min_actions = j.at("min_actions").get<int>();
          out.push_back(std::move(r));
          open = true;
        } else if (event == "episode_end") {
          if (!open) throw ParseError("episode_end without episode_start", line_no);
          out.back().success = j.at("success").get<bool>();
          out.back().spl = j.at("spl").get<double>();
          out.back().sna = j.at("sna").get<double>();
          open = false;
        }
        continue;
      }
      if (!open) throw ParseError("step record outside an episode", line_no);
      StepLog s;
      s.t = j.at("t").get<int>();
      s.x = j.at("x").get<int>();
      s.y = j.at("y").get<int>();
      s.heading = parse_heading(j.at("heading").get<std::string>());
      s.action = parse_action(j.at("action").get<std::string>());
      s.reward = j.at("reward").get<double>();
      s.d_geo = j.at("d_geo").get<int>();
      out.back().steps.push_back(s);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed log record: ") + e.what(), line_no);
    } catch (const DataError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

std::vector<TrajectoryRecord> read_trajectories_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory log '" + path + "'");
  return read_trajectories(in);
}

}  // namespace agsa::env
