#include "sabm/scenarios/evac.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "sabm/agent.hpp"
#include "sabm/error.hpp"
#include "sabm/export.hpp"
#include "sabm/scenarios/common.hpp"

namespace sabm::evac {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(ExitId e) {
  switch (e) {
    case ExitId::left: return "left";
    case ExitId::bottom: return "bottom";
    case ExitId::right: return "right";
  }
  return "left";
}

std::optional<ExitId> exit_from_string(std::string_view t) {
  for (ExitId e : kExits) {
    if (to_string(e) == t) return e;
  }
  return std::nullopt;
}

int chebyshev(Pos a, Pos b) { return std::max(std::abs(a.r - b.r), std::abs(a.c - b.c)); }

std::string format_pos(Pos p) { return "(" + std::to_string(p.r) + ", " + std::to_string(p.c) + ")"; }

std::optional<ExitId> EvacGrid::exit_at(Pos p) const {
  if (!in_bounds(p) || at(p) != Cell::exit) return std::nullopt;
  for (ExitId e : kExits) {
    const auto& cells_of = exits[static_cast<int>(e)];
    if (std::find(cells_of.begin(), cells_of.end(), p) != cells_of.end()) return e;
  }
  return std::nullopt;
}

std::size_t EvacGrid::free_cells() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] == Cell::empty && occupant[i] < 0) ++n;
  }
  return n;
}

EvacGrid make_room(int size) {
  if (size < 5) throw ConfigError("room too small");
  EvacGrid g;
  g.size = size;
  g.cells.assign(static_cast<std::size_t>(size * size), Cell::empty);
  g.occupant.assign(g.cells.size(), -1);
  for (int i = 0; i < size; ++i) {
    g.cells[g.index({0, i})] = Cell::wall;
    g.cells[g.index({size - 1, i})] = Cell::wall;
    g.cells[g.index({i, 0})] = Cell::wall;
    g.cells[g.index({i, size - 1})] = Cell::wall;
  }
  const int mid = size / 2;
  for (int k = -1; k <= 1; ++k) {
    g.exits[0].push_back({mid + k, 0});
    g.exits[1].push_back({size - 1, mid + k});
  }
  g.exits[2].push_back({mid, size - 1});
  for (const auto& side : g.exits) {
    for (Pos p : side) g.cells[g.index(p)] = Cell::exit;
  }
  return g;
}

EvacGrid parse_layout(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(line);
  }
  const int n = static_cast<int>(rows.size());
  if (n < 5) throw ConfigError("layout needs at least 5 rows");
  EvacGrid g;
  g.size = n;
  g.cells.assign(static_cast<std::size_t>(n * n), Cell::empty);
  g.occupant.assign(g.cells.size(), -1);
  for (int r = 0; r < n; ++r) {
    if (static_cast<int>(rows[r].size()) != n) throw ConfigError("layout must be square");
    for (int c = 0; c < n; ++c) {
      const bool boundary = r == 0 || c == 0 || r == n - 1 || c == n - 1;
      Cell cell;
      switch (rows[r][c]) {
        case '#': cell = Cell::wall; break;
        case 'E': cell = Cell::exit; break;
        case 'X': cell = Cell::obstacle; break;
        case '.': cell = Cell::empty; break;
        default: throw ConfigError(std::string("layout: unknown cell '") + rows[r][c] + "'");
      }
      if (boundary && cell == Cell::empty) throw ConfigError("layout boundary must be walls or exits");
      if (!boundary && cell == Cell::exit) throw ConfigError("exits must lie on the boundary");
      g.cells[g.index({r, c})] = cell;
      if (cell != Cell::exit) continue;
      if (c == 0) {
        g.exits[0].push_back({r, c});
      } else if (r == n - 1) {
        g.exits[1].push_back({r, c});
      } else if (c == n - 1) {
        g.exits[2].push_back({r, c});
      } else {
        throw ConfigError("exits on the top wall are not supported");
      }
    }
  }
  for (const auto& side : g.exits) {
    if (side.empty()) throw ConfigError("layout needs left, bottom and right exits");
  }
  return g;
}

std::string default_obstacle_layout() {
  EvacGrid g = make_room(33);
  // Four shelves and a pillar block in front of the right exit's corridor.
  auto block = [&](int r0, int r1, int c0, int c1) {
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) g.cells[g.index({r, c})] = Cell::obstacle;
    }
  };
  block(7, 8, 6, 12);
  block(7, 8, 20, 26);
  block(24, 25, 6, 12);
  block(24, 25, 20, 26);
  block(14, 18, 10, 11);
  block(13, 14, 22, 23);
  block(18, 19, 22, 23);
  std::string out;
  for (int r = 0; r < g.size; ++r) {
    for (int c = 0; c < g.size; ++c) {
      switch (g.at({r, c})) {
        case Cell::wall: out += '#'; break;
        case Cell::exit: out += 'E'; break;
        case Cell::obstacle: out += 'X'; break;
        case Cell::empty: out += '.'; break;
      }
    }
    out += '\n';
  }
  return out;
}

std::string_view to_string(Persona p) {
  switch (p) {
    case Persona::strong_strong: return "strong_strong";
    case Persona::strong_weak: return "strong_weak";
    case Persona::weak_strong: return "weak_strong";
    case Persona::weak_weak: return "weak_weak";
  }
  return "strong_strong";
}

std::string persona_text(Persona p) {
  switch (p) {
    case Persona::strong_strong: return "You are positive and full of energy, and you are strong and fit";
    case Persona::strong_weak: return "You are positive and full of energy, but you are not a strong person";
    case Persona::weak_strong: return "You are negative and afraid of difficulties, but you are strong and fit";
    case Persona::weak_weak: return "You are negative and afraid of difficulties, and you are not a strong person";
  }
  return {};
}

bool physically_strong(Persona p) { return p == Persona::strong_strong || p == Persona::strong_weak; }

std::string_view to_string(AgentStatus s) {
  switch (s) {
    case AgentStatus::normal: return "normal";
    case AgentStatus::critical: return "critical";
    case AgentStatus::disabled: return "disabled";
    case AgentStatus::escaped: return "escaped";
  }
  return "normal";
}

namespace {

AgentStatus status_from_string(const std::string& s) {
  for (auto st : {AgentStatus::normal, AgentStatus::critical, AgentStatus::disabled, AgentStatus::escaped}) {
    if (to_string(st) == s) return st;
  }
  throw SerializationError("unknown agent status: " + s);
}

Persona persona_from_string(const std::string& s) {
  for (auto p : {Persona::strong_strong, Persona::strong_weak, Persona::weak_strong, Persona::weak_weak}) {
    if (to_string(p) == s) return p;
  }
  throw SerializationError("unknown persona: " + s);
}

json pos_json(Pos p) { return json::array({p.r, p.c}); }
Pos pos_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace

json to_json_value(const EvacAgent& a) {
  json hist = json::array();
  for (ExitId e : a.target_history) hist.push_back(to_string(e));
  return {{"id", a.id},
          {"pos", pos_json(a.pos)},
          {"last_pos", pos_json(a.last_pos)},
          {"persona", to_string(a.persona)},
          {"competitive", a.competitive},
          {"tolerance", a.tolerance},
          {"tolerance_limit", a.tolerance_limit},
          {"status", to_string(a.status)},
          {"overtaken", a.overtaken},
          {"target", a.target ? json(to_string(*a.target)) : json(nullptr)},
          {"target_history", hist},
          {"panic", a.panic},
          {"weights", a.weights},
          {"left_round", a.left_round},
          {"escaped_via", a.escaped_via ? json(to_string(*a.escaped_via)) : json(nullptr)}};
}

EvacAgent evac_agent_from_json(const json& j) {
  EvacAgent a;
  a.id = j.at("id");
  a.pos = pos_from(j.at("pos"));
  a.last_pos = pos_from(j.at("last_pos"));
  a.persona = persona_from_string(j.at("persona"));
  a.competitive = j.at("competitive");
  a.tolerance = j.at("tolerance");
  a.tolerance_limit = j.at("tolerance_limit");
  a.status = status_from_string(j.at("status"));
  a.overtaken = j.at("overtaken");
  if (!j.at("target").is_null()) a.target = exit_from_string(j.at("target").get<std::string>());
  for (const auto& e : j.at("target_history")) a.target_history.push_back(*exit_from_string(e.get<std::string>()));
  a.panic = j.at("panic");
  a.weights = j.at("weights").get<std::array<double, 3>>();
  a.left_round = j.at("left_round");
  if (!j.at("escaped_via").is_null()) a.escaped_via = exit_from_string(j.at("escaped_via").get<std::string>());
  return a;
}

EvacParams EvacParams::from_json(const json& p) {
  EvacParams e;
  e.n_agents = p.value("n_agents", e.n_agents);
  if (e.n_agents < 0) throw ConfigError("n_agents must be >= 0");
  e.obstacles = p.value("obstacles", e.obstacles);
  e.obstacle_file = p.value("obstacle_file", e.obstacle_file);
  e.personas = p.value("personas", e.personas);
  e.conversation = p.value("conversation", e.conversation);
  e.speak_probability = p.value("speak_probability", e.speak_probability);
  if (e.speak_probability < 0.0 || e.speak_probability > 1.0) throw ConfigError("speak_probability must be in [0,1]");
  e.hearing_radius = p.value("hearing_radius", e.hearing_radius);
  e.view_radius = p.value("view_radius", e.view_radius);
  e.view_half_angle = p.value("view_half_angle", e.view_half_angle);
  e.mode = p.value("mode", e.mode);
  if (e.mode != "sabm" && e.mode != "abm") throw ConfigError("evac mode must be sabm or abm");
  e.settings = settings_from_params(p, LlmSettings{"gpt-4-0314", 0.0, 512});
  e.variants = selections_from_params(p);
  return e;
}

std::vector<EvacAgent> build_grid(EvacGrid& grid, const EvacParams& params, RunContext& ctx) {
  std::vector<Pos> free;
  for (int r = 0; r < grid.size; ++r) {
    for (int c = 0; c < grid.size; ++c) {
      if (grid.walkable({r, c}) && grid.occupant_at({r, c}) < 0) free.push_back({r, c});
    }
  }
  if (static_cast<std::size_t>(params.n_agents) > free.size()) {
    throw CapacityExceeded(std::to_string(params.n_agents) + " agents do not fit into " +
                           std::to_string(free.size()) + " free cells");
  }
  // Partial Fisher-Yates: the first n cells are a uniform sample without replacement.
  for (int i = 0; i < params.n_agents; ++i) {
    const auto j = i + static_cast<std::size_t>(ctx.below(free.size() - i, "evac.place"));
    std::swap(free[i], free[j]);
  }
  std::vector<EvacAgent> agents;
  for (int i = 0; i < params.n_agents; ++i) {
    EvacAgent a;
    a.id = i;
    a.pos = a.last_pos = free[i];
    a.persona = static_cast<Persona>(i % 4);
    const bool strong = physically_strong(a.persona);
    a.competitive = ctx.normal(strong ? 3.0 : 2.0, 1.0, "evac.competitive");
    a.tolerance = ctx.normal(strong ? 18.0 : 16.0, 1.0, "evac.tolerance");
    a.tolerance_limit = ctx.normal(strong ? 26.0 : 23.0, 1.0, "evac.tolerance_limit");
    grid.occupant[grid.index(a.pos)] = i;
    agents.push_back(std::move(a));
  }
  return agents;
}

Pos nearest_exit_cell(const EvacGrid& grid, ExitId exit, Pos from) {
  const auto& cells = grid.exits[static_cast<int>(exit)];
  Pos best = cells.front();
  for (Pos p : cells) {
    if (chebyshev(from, p) < chebyshev(from, best)) best = p;
  }
  return best;
}

ViewInfo field_of_view(const EvacGrid& grid, const std::vector<EvacAgent>& agents, const EvacAgent& agent, int radius,
                       double half_angle_deg) {
  ViewInfo v;
  const double cos_limit = std::cos(half_angle_deg * M_PI / 180.0);
  for (ExitId e : kExits) {
    const int k = static_cast<int>(e);
    const Pos goal = nearest_exit_cell(grid, e, agent.pos);
    v.distance[k] = chebyshev(agent.pos, goal);
    const double gx = goal.c - agent.pos.c, gy = goal.r - agent.pos.r;
    const double gn = std::hypot(gx, gy);
    for (const auto& other : agents) {
      if (other.id == agent.id || !other.active()) continue;
      if (chebyshev(agent.pos, other.pos) > radius) continue;
      const double ox = other.pos.c - agent.pos.c, oy = other.pos.r - agent.pos.r;
      const double on = std::hypot(ox, oy);
      if (gn == 0.0 || on == 0.0) continue;
      if ((gx * ox + gy * oy) / (gn * on) >= cos_limit - 1e-12) ++v.people[k];
    }
  }
  return v;
}

double congestion_degree(const EvacGrid& grid, const std::vector<EvacAgent>& agents, const EvacAgent& agent) {
  double degree = 0.0;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const Pos p{agent.pos.r + dr, agent.pos.c + dc};
      if (!grid.in_bounds(p)) continue;
      const int j = grid.occupant_at(p);
      if (j < 0) continue;
      degree += std::max(0.0, agents[j].competitive - agent.competitive);
    }
  }
  return degree;
}

EvacAgent congestion_update(EvacAgent a, double degree) {
  if (!a.active()) return a;
  if (degree > a.tolerance) {
    ++a.overtaken;
    a.status = AgentStatus::critical;
    if (a.overtaken > a.tolerance_limit) a.status = AgentStatus::disabled;
  } else {
    a.status = AgentStatus::normal;
  }
  return a;
}

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::up: return "up";
    case Direction::down: return "down";
    case Direction::left: return "left";
    case Direction::right: return "right";
    case Direction::upper_left: return "upper-left";
    case Direction::upper_right: return "upper-right";
    case Direction::lower_left: return "lower-left";
    case Direction::lower_right: return "lower-right";
    case Direction::stay: return "stay";
  }
  return "stay";
}

Pos step_to(Pos p, Direction d) {
  switch (d) {
    case Direction::up: return {p.r - 1, p.c};
    case Direction::down: return {p.r + 1, p.c};
    case Direction::left: return {p.r, p.c - 1};
    case Direction::right: return {p.r, p.c + 1};
    case Direction::upper_left: return {p.r - 1, p.c - 1};
    case Direction::upper_right: return {p.r - 1, p.c + 1};
    case Direction::lower_left: return {p.r + 1, p.c - 1};
    case Direction::lower_right: return {p.r + 1, p.c + 1};
    case Direction::stay: return p;
  }
  return p;
}

std::string bearing_word(Pos from, Pos to) {
  const int dr = (to.r > from.r) - (to.r < from.r);
  const int dc = (to.c > from.c) - (to.c < from.c);
  if (dr == 0 && dc == 0) return "here";
  for (Direction d : kDirections) {
    const Pos s = step_to({0, 0}, d);
    if (s.r == dr && s.c == dc) return std::string(to_string(d));
  }
  return "here";
}

std::vector<Direction> feasible_moves(const EvacGrid& grid, const EvacAgent& agent, bool diagonal) {
  std::vector<Direction> out;
  for (Direction d : kDirections) {
    if (d == Direction::stay) continue;
    const Pos s = step_to({0, 0}, d);
    if (!diagonal && s.r != 0 && s.c != 0) continue;
    const Pos p = step_to(agent.pos, d);
    if (!grid.in_bounds(p)) continue;
    const Cell cell = grid.at(p);
    if (cell == Cell::exit || (cell == Cell::empty && grid.occupant_at(p) < 0)) out.push_back(d);
  }
  out.push_back(Direction::stay);
  return out;
}

Direction greedy_move(const std::vector<Direction>& options, Pos from, Pos goal) {
  Direction best = Direction::stay;
  int best_d = chebyshev(from, goal);
  int best_rank = static_cast<int>(kDirections.size());
  for (Direction d : options) {
    const int dist = chebyshev(step_to(from, d), goal);
    const int rank = static_cast<int>(d);
    if (dist < best_d || (dist == best_d && rank < best_rank)) {
      best = d;
      best_d = dist;
      best_rank = rank;
    }
  }
  return best;
}

std::vector<Placement> resolve_moves(const std::vector<MoveIntent>& intents, EvacGrid& grid,
                                     std::vector<EvacAgent>& agents, RunContext& ctx) {
  std::map<std::size_t, std::vector<int>> by_cell;  // ordered, so conflict draws happen in cell order
  for (const auto& in : intents) {
    if (in.direction == Direction::stay) continue;
    const Pos to = step_to(agents[in.agent].pos, in.direction);
    by_cell[grid.index(to)].push_back(in.agent);
  }
  std::vector<Placement> out;
  for (auto& [cell, claimants] : by_cell) {
    int winner = claimants.front();
    if (claimants.size() > 1) {
      std::sort(claimants.begin(), claimants.end());
      winner = claimants[ctx.below(claimants.size(), "evac.resolve")];
    }
    EvacAgent& a = agents[winner];
    const Pos to{static_cast<int>(cell) / grid.size, static_cast<int>(cell) % grid.size};
    Placement pl{winner, a.pos, to, grid.exit_at(to)};
    grid.occupant[grid.index(a.pos)] = -1;
    a.last_pos = a.pos;
    a.pos = to;
    if (pl.escaped) {
      a.status = AgentStatus::escaped;
      a.escaped_via = pl.escaped;
      a.left_round = ctx.round();
    } else {
      grid.occupant[cell] = winner;
    }
    out.push_back(pl);
  }
  return out;
}

std::string raster(const EvacGrid& grid, const std::vector<EvacAgent>& agents) {
  std::string out;
  out.reserve(static_cast<std::size_t>(grid.size * (grid.size + 1)));
  for (int r = 0; r < grid.size; ++r) {
    for (int c = 0; c < grid.size; ++c) {
      const Pos p{r, c};
      const int occ = grid.occupant_at(p);
      if (occ >= 0) {
        out += static_cast<char>('1' + static_cast<int>(agents[occ].persona));
        continue;
      }
      switch (grid.at(p)) {
        case Cell::wall: out += '#'; break;
        case Cell::exit: out += 'E'; break;
        case Cell::obstacle: out += 'X'; break;
        case Cell::empty: out += '.'; break;
      }
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scripted evacuee

namespace {

const char* const kGalleryMarker = "art gallery";

std::optional<ExitId> pick_exit(const std::string& text, bool farthest) {
  static const std::regex kLine(R"(Exit (left|bottom|right): (\d+) away)");
  std::optional<ExitId> best;
  int best_d = 0;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kLine); it != std::sregex_iterator(); ++it) {
    const ExitId e = *exit_from_string((*it)[1].str());
    const int d = std::stoi((*it)[2].str());
    // kExits order is the tie-break order; lines arrive in that order.
    if (!best || (farthest ? d > best_d : d < best_d)) {
      best = e;
      best_d = d;
    }
  }
  return best;
}

std::vector<std::string> exit_lines(const std::string& text) {
  static const std::regex kLine(R"(Exit (?:left|bottom|right): \d+ away, \d+ people around\.)");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kLine); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
  }
  return out;
}

}  // namespace

std::string EvacOracle::respond(const ChatRequest& request) const {
  const auto tag = parse_scenario_tag(request);
  const std::string stage = tag ? tag->stage : "move";
  const std::string& text = last_user_text(request);
  const bool gallery = text.find(kGalleryMarker) != std::string::npos;

  if (stage == "feel") {
    if (text.find("[minimal, mild, moderate, high, extreme]") != std::string::npos) return "high, mild, moderate";
    return gallery ? "I feel relaxed and curious about the paintings around me."
                   : "I am alert but not panicking, and I know where the exits are.";
  }
  if (stage == "assess") {
    std::string out;
    for (const auto& l : exit_lines(text)) out += (out.empty() ? "" : " ") + l + " It is worth considering.";
    return out.empty() ? "All exits look similar." : out;
  }
  if (stage == "talk") {
    const auto e = pick_exit(text, gallery);
    return "The " + std::string(to_string(e.value_or(ExitId::left))) + " exit looks like the quickest way out.";
  }
  if (stage == "choose") return std::string(to_string(pick_exit(text, gallery).value_or(ExitId::left)));
  if (stage == "explain") return "It brings me closer to the exit I chose.";

  // move: greedy step towards the chosen exit cell among the listed codes
  static const std::regex kAt(R"(you are at \((\d+), (\d+)\))");
  static const std::regex kGoal(R"(chosen the exit at \((\d+), (\d+)\))");
  static const std::regex kOption(
      R"((\d+): (up|down|left|right|upper-left|upper-right|lower-left|lower-right|stay)(?: to| at) \((\d+), (\d+)\))");
  std::smatch m;
  if (!std::regex_search(text, m, kAt)) return "0";
  const Pos at{std::stoi(m[1].str()), std::stoi(m[2].str())};
  if (!std::regex_search(text, m, kGoal)) return "0";
  const Pos goal{std::stoi(m[1].str()), std::stoi(m[2].str())};
  std::map<Direction, int> codes;
  std::vector<Direction> options;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kOption); it != std::sregex_iterator(); ++it) {
    for (Direction d : kDirections) {
      if (to_string(d) == (*it)[2].str()) {
        codes[d] = std::stoi((*it)[1].str());
        options.push_back(d);
      }
    }
  }
  if (options.empty()) return "0";
  const Direction d = greedy_move(options, at, goal);
  return std::to_string(codes.count(d) ? codes[d] : codes.begin()->second);
}

// ---------------------------------------------------------------------------
// Templates

void register_templates(TemplateRegistry& r) {
  r.add({"evac.scenario",
         "Because of the earthquake, you need to escape from the room where you are as fast as possible. The room "
         "has a size of 33 * 33. There are 3 exits in the room. The exits are located at the left, bottom, and right "
         "of the room.\n"
         "To escape from the room, you need to consider the following two aspects: exit proximity and people count. "
         "The exit proximity is the distance between you and the nearest exit. The people count is the number of "
         "people you can see. The distance to the nearest exit is {distance_to_nearest_exit}. There are "
         "{number_of_people} people in your visible range."});
  r.add_variant({"evac.scenario", VariantKind::paraphrase, "v1",
                 "Due to the earthquake, it is imperative that you quickly vacate the room you are currently in. The "
                 "room measures 33 by 33 units and offers three potential exits situated on the left, bottom, and "
                 "right sides of the room. To successfully escape from this room, you should take into account two "
                 "factors: the proximity of the nearest exit and the number of people present. The exit proximity "
                 "refers to the distance between your current location and the closest exit, denoted as "
                 "{distance_to_nearest_exit}. Additionally, within your line of sight, there are a total of "
                 "{number_of_people} individuals."});
  r.add_variant({"evac.scenario", VariantKind::objectives, "gallery",
                 "You are in an art gallery looking at paintings and you want to take your time to walk around the "
                 "gallery and see different paintings everywhere in the room before you leave. The gallery has a "
                 "size of 33 * 33. There are 3 exits in the room. The exits are located at the left, bottom, and "
                 "right of the gallery. The distance to the nearest exit is {distance_to_nearest_exit}. There are "
                 "{number_of_people} people in your visible range."});
  r.add({"evac.movement",
         "You need to escape to the exit as fast as possible. The room has a size of 33 * 33. We use (i, j) to "
         "denote the position, smaller i means top and bigger i means bottom; smaller j means left and bigger j "
         "means right. Position (1, 1) is at the top left of the room. It is possible to move diagonally, e.g., from "
         "(1, 1) to (2, 2) is one move to the lower right, and is faster than (1, 1)->(1, 2)->(2, 2)."});
  r.add({"evac.feel",
         "{persona}. Please tell me your feelings about the situation around you in one sentence showing if you are "
         "panicking or not."});
  r.add({"evac.feel.abm",
         "Please tell me your inclination: Exit Proximity, People Count, Crowd Density.\n"
         "For each aspect, please use one of the five words listed below: [minimal, mild, moderate, high, extreme]\n"
         "Your output should only contain three words, with commas between them. For example, 'minimal, mild, "
         "moderate' is a valid output. No period in the end. This output indicates that you are extremely focused "
         "on Exit Proximity, and you are mildly focused on People Count, and you are moderately focused on Crowd "
         "Density."});
  r.add({"evac.exit_line", "Exit {exit_id}: {distance_to_exit} away, {number_of_agents_around} people around."});
  r.add({"evac.assess",
         "{persona}. Now you feel: \"{panic_level}\".\n\n"
         "Here shows you the distances to different exits and the number of people you can see towards those "
         "exits:\n{exit_lines}\n\n"
         "Please tell me briefly how will you evaluate the two aspects of each exit based on your personal mental "
         "and physical characteristics in one sentence. Please give 3 sentences for each exit (around 15 words)."});
  r.add({"evac.choose",
         "{persona}. Now you feel: \"{panic_level}\".\n\n"
         "There are 3 exits in this room. Based on the current situation, your personal feelings on each exit are: "
         "{assessment}.\n\n"
         "{history}{heard}"
         "Please tell me which exit you would like to choose to escape, and you always want to escape as fast as "
         "possible. Please use the exit id to indicate your choice. For example, if you want to choose exit left, "
         "you can say 'left'. Only output one word of text to indicate your choice.\n"
         "You can choose from ['bottom', 'left', 'right']. Give your answer without any additional text."});
  r.add({"evac.history.target",
         "Here are the previous decisions you made for the target exit from the beginning: {target_exit_history}. "
         "This means most recently you were heading to exit {target_exit}. Please keep these in mind when you make "
         "your decision."});
  r.add({"evac.history.position",
         "You were at {last_position} last time. To escape from the room, you have chosen the exit at "
         "{exit_position} and you are at {cur_position}, so the exit is on your {direction}."});
  r.add({"evac.move",
         "{position_history}\n\n"
         "Select your move from these possible options (you can move in diagonal or horizontal directions, options "
         "with obstacles or other people are excluded and not in the path, and option codes are in random order):\n"
         "{movement_list}\n"
         "Please tell me your best choice to escape as fast as possible with one single code without any additional "
         "texts. You can choose from {valid_directions}."});
  r.add_variant({"evac.move", VariantKind::elements, "four_directions",
                 "{position_history}\n\n"
                 "Select your move from these possible options (You can move in diagonal directions (up, down, left, "
                 "right), options with obstacles or other people are excluded and not in the path, and option codes "
                 "are in random order):\n"
                 "{movement_list}\n"
                 "Please tell me your best choice to escape as fast as possible with one single code without any "
                 "additional texts. You can choose from {valid_directions}."});
  r.add({"evac.share",
         "You may briefly share information about evacuation with others, such as your feelings, which exit seems to "
         "be the best option for a quick escape, or anything else you would like to deliver. Avoid using numbers in "
         "the communication. Use less than 50 words, not too long."});
  r.add({"evac.receive", "You hear {number_of_people} people around you say:\n{messages}"});
}

// ---------------------------------------------------------------------------
// Scenario

namespace {

double intensity(const std::string& word) {
  static const std::map<std::string, double> kMap{
      {"minimal", 0.0}, {"mild", 0.25}, {"moderate", 0.5}, {"high", 0.75}, {"extreme", 1.0}};
  const auto it = kMap.find(word);
  return it == kMap.end() ? -1.0 : it->second;
}

std::optional<std::array<double, 3>> parse_intensities(const std::string& raw) {
  std::array<double, 3> out{};
  std::string lowered;
  for (char ch : raw) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  static const std::regex kWord("[a-z]+");
  std::size_t k = 0;
  for (auto it = std::sregex_iterator(lowered.begin(), lowered.end(), kWord); it != std::sregex_iterator(); ++it) {
    const double v = intensity(it->str());
    if (v < 0.0) continue;
    if (k == 3) return std::nullopt;
    out[k++] = v;
  }
  if (k != 3) return std::nullopt;
  return out;
}

std::string agent_name(int id) { return "evacuee" + std::to_string(id); }

class EvacScenario final : public Scenario {
 public:
  EvacScenario(EvacParams params, const TemplateRegistry& templates) : p_(std::move(params)), templates_(templates) {
    if (p_.obstacles) {
      std::string text = default_obstacle_layout();
      if (!p_.obstacle_file.empty()) {
        std::ifstream in(p_.obstacle_file);
        if (!in) throw IoError("cannot read obstacle layout " + p_.obstacle_file);
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
      }
      grid_ = parse_layout(text);
    } else {
      grid_ = make_room(33);
    }
    diagonal_ = !has_selection(p_.variants, "evac.move", "four_directions");
  }

  std::string name() const override { return "evac"; }
  std::vector<std::string> stages() const override { return {"congestion", "feel", "assess", "talk", "choose", "move"}; }
  int default_max_rounds() const override { return 50; }

  void init(RunContext& ctx) override {
    agents_ = build_grid(grid_, p_, ctx);
    json placed = json::array();
    for (const auto& a : agents_) {
      placed.push_back({{"id", a.id}, {"pos", pos_json(a.pos)}, {"persona", to_string(a.persona)},
                        {"competitive", a.competitive}, {"tolerance", a.tolerance},
                        {"tolerance_limit", a.tolerance_limit}});
    }
    ctx.record(EventKind::world, json{{"event", "placement"}, {"agents", placed}});
    rasters_.push_back(raster(grid_, agents_));
  }

  void step(RunContext& ctx) override {
    ctx.set_stage("congestion");
    // Degrees use the positions at the start of the round for everyone.
    std::vector<double> degrees(agents_.size(), 0.0);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (agents_[i].active()) degrees[i] = congestion_degree(grid_, agents_, agents_[i]);
    }
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      EvacAgent& a = agents_[i];
      if (!a.active()) continue;
      const AgentStatus before = a.status;
      a = congestion_update(a, degrees[i]);
      if (a.status != before || a.status == AgentStatus::critical) {
        ctx.record(EventKind::world,
                   json{{"event", "congestion"}, {"degree", degrees[i]}, {"status", to_string(a.status)},
                        {"overtaken", a.overtaken}},
                   agent_name(a.id));
      }
      if (a.status == AgentStatus::disabled) {
        grid_.occupant[grid_.index(a.pos)] = -1;
        a.left_round = ctx.round();
      }
    }

    std::vector<int> movers;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (agents_[i].status == AgentStatus::normal) movers.push_back(static_cast<int>(i));
    }
    std::vector<ViewInfo> views(agents_.size());
    for (int i : movers) views[i] = field_of_view(grid_, agents_, agents_[i], p_.view_radius, p_.view_half_angle);

    if (p_.mode == "abm") {
      abm_round(movers, views, ctx);
    } else {
      sabm_round(movers, views, ctx);
    }

    ctx.set_stage("move");
    std::vector<MoveIntent> intents;
    for (int i : movers) {
      const Direction d = decide_move(agents_[i], ctx);
      intents.push_back({i, d});
    }
    const auto placements = resolve_moves(intents, grid_, agents_, ctx);

    std::array<int, 3> through{0, 0, 0};
    json moved = json::array();
    for (const auto& pl : placements) {
      if (pl.escaped) ++through[static_cast<int>(*pl.escaped)];
      moved.push_back({{"agent", pl.agent}, {"from", pos_json(pl.from)}, {"to", pos_json(pl.to)},
                       {"escaped", pl.escaped ? json(to_string(*pl.escaped)) : json(nullptr)}});
    }
    for (std::size_t k = 0; k < 3; ++k) escaped_by_exit_[k] += through[k];
    std::array<int, 4> by_persona{0, 0, 0, 0};
    int active = 0, escaped = 0, disabled = 0;
    for (const auto& a : agents_) {
      if (a.active()) ++active;
      if (a.status == AgentStatus::escaped) {
        ++escaped;
        ++by_persona[static_cast<int>(a.persona)];
      }
      if (a.status == AgentStatus::disabled) ++disabled;
    }
    const int double_occ = count_double_occupancy();
    ctx.set_stage("round");
    ctx.record(EventKind::world, json{{"event", "round"},
                                      {"active", active},
                                      {"escaped", escaped},
                                      {"disabled", disabled},
                                      {"through", {{"left", through[0]}, {"bottom", through[1]}, {"right", through[2]}}},
                                      {"double_occupancy", double_occ},
                                      {"moves", moved}});
    escaped_series_.push_back(escaped);
    active_series_.push_back(active);
    right_series_.push_back(through[2]);
    persona_series_.push_back(by_persona);
    rasters_.push_back(raster(grid_, agents_));
  }

  std::optional<std::string> endpoint() const override {
    for (const auto& a : agents_) {
      if (a.active()) return std::nullopt;
    }
    return std::string("all agents have left the room");
  }

  SeriesRegistry series() const override {
    return {{"escaped", escaped_series_}, {"active", active_series_}, {"right_throughput", right_series_}};
  }

  json metrics() const override {
    int escaped = 0, disabled = 0, stranded = 0;
    std::map<std::string, int> per_persona, per_persona_total;
    std::vector<double> escape_rounds;
    for (const auto& a : agents_) {
      ++per_persona_total[std::string(to_string(a.persona))];
      if (a.status == AgentStatus::escaped) {
        ++escaped;
        ++per_persona[std::string(to_string(a.persona))];
        escape_rounds.push_back(a.left_round);
      } else if (a.status == AgentStatus::disabled) {
        ++disabled;
      } else {
        ++stranded;
      }
    }
    json pp = json::object();
    for (const auto& [k, n] : per_persona_total) pp[k] = {{"escaped", per_persona.count(k) ? per_persona.at(k) : 0}, {"total", n}};
    return {{"n_agents", agents_.size()},
            {"escaped", escaped},
            {"disabled", disabled},
            {"stranded", stranded},
            {"rounds", escaped_series_.size()},
            {"escaped_by_exit",
             {{"left", escaped_by_exit_[0]}, {"bottom", escaped_by_exit_[1]}, {"right", escaped_by_exit_[2]}}},
            {"escaped_by_persona", pp},
            {"last_escape_round", escape_rounds.empty() ? json(nullptr) : json(*std::max_element(escape_rounds.begin(), escape_rounds.end()))}};
  }

  json save_state() const override {
    json agents = json::array();
    for (const auto& a : agents_) agents.push_back(to_json_value(a));
    json persona_rows = json::array();
    for (const auto& row : persona_series_) persona_rows.push_back(row);
    return {{"agents", agents},
            {"escaped_series", escaped_series_},
            {"active_series", active_series_},
            {"right_series", right_series_},
            {"persona_series", persona_rows},
            {"escaped_by_exit", escaped_by_exit_},
            {"rasters", rasters_}};
  }

  void load_state(const json& s) override {
    agents_.clear();
    for (const auto& a : s.at("agents")) agents_.push_back(evac_agent_from_json(a));
    std::fill(grid_.occupant.begin(), grid_.occupant.end(), -1);
    for (const auto& a : agents_) {
      if (a.active()) grid_.occupant[grid_.index(a.pos)] = a.id;
    }
    escaped_series_ = s.at("escaped_series").get<std::vector<double>>();
    active_series_ = s.at("active_series").get<std::vector<double>>();
    right_series_ = s.at("right_series").get<std::vector<double>>();
    persona_series_.clear();
    for (const auto& row : s.at("persona_series")) persona_series_.push_back(row.get<std::array<int, 4>>());
    escaped_by_exit_ = s.at("escaped_by_exit").get<std::array<int, 3>>();
    rasters_ = s.at("rasters").get<std::vector<std::string>>();
  }

  ProbeReport probe(const json& agent_spec, const json& observations, RunContext& ctx) override {
    // One evacuee in an otherwise empty room, plus injected bystanders.
    std::fill(grid_.occupant.begin(), grid_.occupant.end(), -1);
    agents_.clear();
    EvacAgent a;
    a.id = 0;
    a.pos = a.last_pos = pos_from(agent_spec.value("position", json::array({2, 3})));
    a.persona = persona_from_string(agent_spec.value("persona", std::string("strong_strong")));
    if (!grid_.walkable(a.pos)) throw ConfigError("probe position is not a free cell");
    agents_.push_back(a);
    grid_.occupant[grid_.index(a.pos)] = 0;
    int next = 1;
    for (const auto& o : observations.value("others", json::array())) {
      EvacAgent b;
      b.id = next;
      b.pos = b.last_pos = pos_from(o);
      if (!grid_.walkable(b.pos) || grid_.occupant_at(b.pos) >= 0) throw ConfigError("probe bystander cell not free");
      grid_.occupant[grid_.index(b.pos)] = next++;
      agents_.push_back(b);
    }
    EvacAgent& me = agents_[0];
    if (observations.contains("last_position")) me.last_pos = pos_from(observations["last_position"]);
    for (const auto& e : observations.value("target_history", json::array())) {
      if (auto x = exit_from_string(e.get<std::string>())) me.target_history.push_back(*x), me.target = *x;
    }
    ProbeReport report;
    const std::size_t before = ctx.log().next_seq();
    std::vector<ViewInfo> views(agents_.size());
    views[0] = field_of_view(grid_, agents_, me, p_.view_radius, p_.view_half_angle);
    std::vector<int> movers{0};
    if (p_.mode == "abm") {
      abm_round(movers, views, ctx);
    } else {
      sabm_round(movers, views, ctx);
    }
    ctx.set_stage("move");
    const Direction d = decide_move(agents_[0], ctx);
    std::string prompt;
    for (const auto& rec : ctx.log().records()) {
      if (rec.seq < before) continue;
      if (rec.kind == EventKind::prompt) {
        const auto& msgs = rec.payload.at("request").at("messages");
        if (!msgs.empty()) prompt = msgs.back().value("content", std::string());
      }
      if (rec.kind != EventKind::parsed) continue;
      report.entries.push_back({rec.stage, prompt, rec.payload.value("raw", std::string()), rec.payload, ""});
    }
    report.summary = {{"target", agents_[0].target ? json(to_string(*agents_[0].target)) : json(nullptr)},
                      {"direction", to_string(d)},
                      {"next", pos_json(step_to(agents_[0].pos, d))},
                      {"panic", agents_[0].panic}};
    return report;
  }

  std::vector<fs::path> export_results(const fs::path& dir, const std::string& run_id) const override {
    const fs::path out = dir / ("run-" + run_id);
    std::vector<fs::path> files;
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < persona_series_.size(); ++k) {
      std::vector<std::string> row{std::to_string(k + 1)};
      for (int v : persona_series_[k]) row.push_back(std::to_string(v));
      rows.push_back(row);
    }
    files.push_back(out / "escaped_by_persona.csv");
    write_csv(files.back(), {"round", "strong_strong", "strong_weak", "weak_strong", "weak_weak"}, rows);
    const fs::path snaps = out / "snapshots";
    fs::create_directories(snaps);
    for (std::size_t k = 0; k < rasters_.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "round-%03zu", k);
      files.push_back(snaps / (std::string(name) + ".txt"));
      std::ofstream(files.back(), std::ios::binary) << rasters_[k];
      files.push_back(snaps / (std::string(name) + ".svg"));
      std::ofstream(files.back(), std::ios::binary) << raster_svg(rasters_[k]);
    }
    return files;
  }

 private:
  std::string t(const std::string& id, const Bindings& b = {}) const { return render_id(templates_, p_.variants, id, b); }

  // Persona-led templates open with "{persona}. "; without a persona that lead is dropped.
  std::string with_persona(const std::string& id, const EvacAgent& a, Bindings b) const {
    b["persona"] = p_.personas ? persona_text(a.persona) : "";
    std::string s = t(id, b);
    if (!p_.personas && s.rfind(". ", 0) == 0) s.erase(0, 2);
    return s;
  }

  std::string scenario_text(const EvacAgent& a, const ViewInfo& v) const {
    const int nearest = *std::min_element(v.distance.begin(), v.distance.end());
    int visible = 0;
    for (const auto& o : agents_) {
      if (o.id != a.id && o.active() && chebyshev(o.pos, a.pos) <= p_.view_radius) ++visible;
    }
    return t("evac.scenario",
             {{"distance_to_nearest_exit", std::to_string(nearest)}, {"number_of_people", std::to_string(visible)}});
  }

  AgentState llm_agent(const EvacAgent& a) const {
    AgentState s;
    s.agent_id = agent_name(a.id);
    s.settings = p_.settings;
    return s;
  }

  std::string exit_block(const ViewInfo& v) const {
    std::string s;
    for (ExitId e : kExits) {
      const int k = static_cast<int>(e);
      if (!s.empty()) s += "\n";
      s += t("evac.exit_line", {{"exit_id", std::string(to_string(e))},
                                {"distance_to_exit", std::to_string(v.distance[k])},
                                {"number_of_agents_around", std::to_string(v.people[k])}});
    }
    return s;
  }

  std::string talk_prompt(const EvacAgent& a) const {
    const std::string lead = p_.personas ? persona_text(a.persona) + ". " : "";
    return scenario_cache_.at(a.id) + "\n\n" + lead + "Now you feel: \"" + a.panic + "\".\n\n" +
           "Your assessment of the exits: " + assessment_.at(a.id) + "\n\n" + t("evac.share");
  }

  void choose_exit(EvacAgent& a, const Transcript& heard, RunContext& ctx) {
    std::string history;
    if (!a.target_history.empty()) {
      std::string list;
      for (ExitId e : a.target_history) list += (list.empty() ? "" : ", ") + std::string(to_string(e));
      history = t("evac.history.target", {{"target_exit_history", list},
                                          {"target_exit", std::string(to_string(a.target_history.back()))}}) +
                "\n\n";
    }
    std::string heard_block;
    if (!heard.empty()) {
      std::string lines;
      for (const auto& u : heard) lines += "agent#" + u.speaker.substr(std::string_view("evacuee").size()) + ": " + u.text + "\n";
      heard_block = t("evac.receive", {{"number_of_people", std::to_string(heard.size())}, {"messages", lines}}) + "\n";
    }
    const std::string prompt =
        scenario_cache_.at(a.id) + "\n\n" +
        with_persona("evac.choose", a,
                     {{"panic_level", a.panic}, {"assessment", assessment_.at(a.id)}, {"history", history},
                      {"heard", heard_block}});
    ctx.set_stage("choose");
    const ActResult res = act_text(llm_agent(a), prompt, ParserSpec::choice({"bottom", "left", "right"}), ctx);
    std::optional<ExitId> chosen;
    if (auto c = res.action.choice()) chosen = exit_from_string(*c);
    if (!chosen) {
      chosen = a.target ? *a.target : nearest_exit(a);
      ctx.record(EventKind::world, json{{"event", "anomaly"}, {"what", "unparseable exit choice, kept previous"}},
                 agent_name(a.id));
    }
    a.target = chosen;
    a.target_history.push_back(*chosen);
  }

  ExitId nearest_exit(const EvacAgent& a) const {
    ExitId best = ExitId::left;
    int best_d = -1;
    for (ExitId e : kExits) {
      const int d = chebyshev(a.pos, nearest_exit_cell(grid_, e, a.pos));
      if (best_d < 0 || d < best_d) best = e, best_d = d;
    }
    return best;
  }

  void sabm_round(const std::vector<int>& movers, const std::vector<ViewInfo>& views, RunContext& ctx) {
    scenario_cache_.clear();
    exit_cache_.clear();
    assessment_.clear();
    for (int i : movers) {
      EvacAgent& a = agents_[i];
      scenario_cache_[a.id] = scenario_text(a, views[i]);
      exit_cache_[a.id] = exit_block(views[i]);
      ctx.set_stage("feel");
      const ActResult feel =
          act_text(llm_agent(a), scenario_cache_[a.id] + "\n\n" + with_persona("evac.feel", a, {}),
                   ParserSpec::free_text(), ctx);
      a.panic = feel.action.conforming ? trim_copy(feel.action.raw) : std::string("I am not sure how I feel.");
      ctx.set_stage("assess");
      const ActResult assess = act_text(
          llm_agent(a),
          scenario_cache_[a.id] + "\n\n" +
              with_persona("evac.assess", a, {{"panic_level", a.panic}, {"exit_lines", exit_cache_[a.id]}}),
          ParserSpec::free_text(), ctx);
      assessment_[a.id] = assess.action.conforming ? trim_copy(assess.action.raw) : exit_cache_[a.id];
    }
    if (!p_.conversation) {
      for (int i : movers) choose_exit(agents_[i], {}, ctx);
      return;
    }
    std::vector<std::string> names;
    std::map<std::string, int> index;
    for (int i : movers) {
      names.push_back(agent_name(agents_[i].id));
      index[names.back()] = i;
    }
    ConversationPolicy policy;
    policy.speak_probability = p_.speak_probability;
    policy.order = SpeakingOrder::random;
    policy.later_turns_only = true;
    policy.audience = [&](const std::string& s, const std::string& h) {
      const Pos a = agents_[index.at(s)].pos, b = agents_[index.at(h)].pos;
      return std::hypot(a.r - b.r, a.c - b.c) <= p_.hearing_radius + 1e-9;
    };
    ctx.set_stage("talk");
    mediate_conversation(
        names, policy, ctx,
        [&](const std::string& speaker, const Transcript&) -> std::optional<std::string> {
          ctx.set_stage("talk");
          const EvacAgent& a = agents_[index.at(speaker)];
          const ActResult res = act_text(llm_agent(a), talk_prompt(a), ParserSpec::free_text(), ctx);
          if (!res.action.conforming) return std::nullopt;
          return trim_copy(res.action.raw);
        },
        [&](const std::string& who, const Transcript& heard) { choose_exit(agents_[index.at(who)], heard, ctx); });
  }

  void abm_round(const std::vector<int>& movers, const std::vector<ViewInfo>& views, RunContext& ctx) {
    for (int i : movers) {
      EvacAgent& a = agents_[i];
      ctx.set_stage("feel");
      const ActResult feel = act_text(llm_agent(a), t("evac.feel.abm"), ParserSpec::free_text(), ctx);
      if (auto w = parse_intensities(feel.action.raw)) {
        a.weights = *w;
      } else {
        a.weights = {0.5, 0.5, 0.5};
        ctx.record(EventKind::world, json{{"event", "anomaly"}, {"what", "unparseable intensities, moderate assumed"}},
                   agent_name(a.id));
      }
      a.panic = feel.action.raw;
      // Weighted cost per exit; every term is scaled to [0, 1].
      const ViewInfo& v = views[i];
      const double max_d = std::max(1, *std::max_element(v.distance.begin(), v.distance.end()));
      const double max_p = std::max(1, *std::max_element(v.people.begin(), v.people.end()));
      std::optional<ExitId> best;
      double best_cost = 0.0;
      for (ExitId e : kExits) {
        const int k = static_cast<int>(e);
        const double cost = a.weights[0] * v.distance[k] / max_d + a.weights[1] * v.people[k] / max_p +
                            a.weights[2] * exit_density(e);
        if (!best || cost < best_cost - 1e-12) best = e, best_cost = cost;
      }
      if (a.weights == std::array<double, 3>{0.0, 0.0, 0.0}) best = nearest_exit(a);
      a.target = best;
      a.target_history.push_back(*best);
      ctx.record(EventKind::world, json{{"event", "abm_choice"}, {"weights", a.weights}, {"target", to_string(*best)}},
                 agent_name(a.id));
    }
  }

  // Share of occupied cells within Chebyshev distance 2 of the exit.
  double exit_density(ExitId e) const {
    int occupied = 0, cells = 0;
    for (Pos x : grid_.exits[static_cast<int>(e)]) {
      for (int dr = -2; dr <= 2; ++dr) {
        for (int dc = -2; dc <= 2; ++dc) {
          const Pos p{x.r + dr, x.c + dc};
          if (!grid_.walkable(p)) continue;
          ++cells;
          if (grid_.occupant_at(p) >= 0) ++occupied;
        }
      }
    }
    return cells == 0 ? 0.0 : static_cast<double>(occupied) / cells;
  }

  Direction decide_move(EvacAgent& a, RunContext& ctx) {
    const auto options = feasible_moves(grid_, a, diagonal_);
    const ExitId target = a.target ? *a.target : nearest_exit(a);
    const Pos goal = nearest_exit_cell(grid_, target, a.pos);
    if (options.size() == 1) return Direction::stay;
    if (p_.mode == "abm") return greedy_move(options, a.pos, goal);

    std::vector<int> codes(options.size());
    for (std::size_t k = 0; k < codes.size(); ++k) codes[k] = static_cast<int>(k) + 1;
    ctx.shuffle(codes, "evac.option_codes");
    std::vector<std::pair<int, Direction>> listed;
    for (std::size_t k = 0; k < options.size(); ++k) listed.push_back({codes[k], options[k]});
    std::sort(listed.begin(), listed.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    std::string list, valid;
    for (const auto& [code, d] : listed) {
      const Pos to = step_to(a.pos, d);
      list += std::to_string(code) + ": " + std::string(to_string(d)) + (d == Direction::stay ? " at " : " to ") +
              format_pos(to) + "\n";
      valid += (valid.empty() ? "" : ", ") + std::to_string(code);
    }
    const std::string history = t("evac.history.position", {{"last_position", format_pos(a.last_pos)},
                                                            {"exit_position", format_pos(goal)},
                                                            {"cur_position", format_pos(a.pos)},
                                                            {"direction", bearing_word(a.pos, goal)}});
    const std::string prompt = scenario_cache_.at(a.id) + "\n\n" + t("evac.movement") + "\n\n" +
                               t("evac.move", {{"position_history", history},
                                               {"movement_list", list},
                                               {"valid_directions", "[" + valid + "]"}});
    const ActResult res = act_text(llm_agent(a), prompt, ParserSpec::integer(), ctx);
    if (auto n = res.action.number()) {
      for (const auto& [code, d] : listed) {
        if (code == static_cast<int>(*n)) return d;
      }
    }
    ctx.record(EventKind::world, json{{"event", "anomaly"}, {"what", "invalid move code, staying"}},
               agent_name(a.id));
    return Direction::stay;
  }

  int count_double_occupancy() const {
    std::map<std::size_t, int> seen;
    int doubles = 0;
    for (const auto& a : agents_) {
      if (!a.active()) continue;
      if (++seen[grid_.index(a.pos)] == 2) ++doubles;
      if (grid_.at(a.pos) != Cell::empty) ++doubles;
    }
    return doubles;
  }

  static std::string trim_copy(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::string raster_svg(const std::string& r) {
    static const std::map<char, const char*> kFill{{'#', "#333333"}, {'E', "#2ca02c"}, {'X', "#8c564b"},
                                                   {'1', "#1f77b4"}, {'2', "#ff7f0e"}, {'3', "#9467bd"},
                                                   {'4', "#d62728"}};
    const int cell = 12;
    std::vector<std::string> rows;
    std::istringstream in(r);
    for (std::string line; std::getline(in, line);) rows.push_back(line);
    const int n = static_cast<int>(rows.size());
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(n * cell) + "\" height=\"" +
                    std::to_string(n * cell) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < static_cast<int>(rows[i].size()); ++j) {
        const auto it = kFill.find(rows[i][j]);
        if (it == kFill.end()) continue;
        s += "<rect x=\"" + std::to_string(j * cell) + "\" y=\"" + std::to_string(i * cell) + "\" width=\"" +
             std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + it->second + "\"/>\n";
      }
    }
    return s + "</svg>\n";
  }

  EvacParams p_;
  const TemplateRegistry& templates_;
  EvacGrid grid_;
  bool diagonal_ = true;
  std::vector<EvacAgent> agents_;
  std::map<int, std::string> scenario_cache_, exit_cache_, assessment_;
  std::vector<double> escaped_series_, active_series_, right_series_;
  std::vector<std::array<int, 4>> persona_series_;
  std::array<int, 3> escaped_by_exit_{0, 0, 0};
  std::vector<std::string> rasters_;
};

}  // namespace

std::unique_ptr<Scenario> make_scenario(const json& params, const TemplateRegistry& templates) {
  return std::make_unique<EvacScenario>(EvacParams::from_json(params), templates);
}

}  // namespace sabm::evac
