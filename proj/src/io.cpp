#include "fusereg/io.hpp"

#include <json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace fusereg {

using json = nlohmann::json;

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

std::string trajectory_to_csv(const Trajectoryd& traj) {
    traj.check();
    std::ostringstream os;
    os << "t";
    for (Index j = 0; j < traj.k(); ++j) os << ",x_" << j + 1;
    for (Index j = 0; j < traj.d(); ++j) os << ",z_" << j + 1;
    for (Index j = 0; j < traj.d(); ++j) os << ",obs_" << j + 1;
    for (Index j = 0; j < traj.sources.cols(); ++j) os << ",u_" << j + 1;
    os << '\n';
    for (Index i = 0; i < traj.steps(); ++i) {
        os << i + 1;
        for (Index j = 0; j < traj.k(); ++j) os << ',' << format_double(traj.states(i, j));
        for (Index j = 0; j < traj.d(); ++j)
            os << ',' << (traj.mask(i, j) ? format_double(traj.measurements(i, j)) : std::string("nan"));
        for (Index j = 0; j < traj.d(); ++j) os << ',' << (traj.mask(i, j) ? 1 : 0);
        for (Index j = 0; j < traj.sources.cols(); ++j) os << ',' << format_double(traj.sources(i, j));
        os << '\n';
    }
    return os.str();
}

void export_csv(const Trajectoryd& traj, const std::filesystem::path& path) {
    write_file_atomic(path, trajectory_to_csv(traj));
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        cells.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return cells;
}

double parse_number(const std::string& cell, long line, const std::string& column) {
    if (cell == "nan" || cell == "NaN" || cell == "NA") return std::nan("");
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (cell.empty() || ec != std::errc() || ptr != last)
        throw ParseError("column '" + column + "': cannot parse '" + cell + "' as a number", line);
    return value;
}

/// Column indices for prefix_1..prefix_n; n is the longest consecutive run.
std::vector<std::size_t> numbered_columns(const std::map<std::string, std::size_t>& index, const std::string& prefix) {
    std::vector<std::size_t> cols;
    for (int j = 1;; ++j) {
        auto it = index.find(prefix + std::to_string(j));
        if (it == index.end()) break;
        cols.push_back(it->second);
    }
    return cols;
}

} // namespace

Trajectoryd trajectory_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_row(line);
            break;
        }
    }
    if (header.empty()) throw SchemaError("trajectory CSV is empty");

    std::map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < header.size(); ++c) index[header[c]] = c;
    const auto x_cols = numbered_columns(index, "x_");
    const auto z_cols = numbered_columns(index, "z_");
    const auto obs_cols = numbered_columns(index, "obs_");
    const auto u_cols = numbered_columns(index, "u_");

    std::vector<std::string> missing;
    if (!index.count("t")) missing.emplace_back("t");
    if (x_cols.empty()) missing.emplace_back("x_1");
    if (z_cols.empty()) missing.emplace_back("z_1");
    for (std::size_t j = obs_cols.size(); j < z_cols.size(); ++j) missing.push_back("obs_" + std::to_string(j + 1));
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw SchemaError("trajectory CSV missing columns: " + list);
    }
    if (obs_cols.size() != z_cols.size()) throw SchemaError("trajectory CSV has more obs_* than z_* columns");

    std::vector<std::vector<double>> xs, zs, us;
    std::vector<std::vector<bool>> obs;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_row(line);
        if (cells.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " cells, found " +
                                 std::to_string(cells.size()),
                             line_no);
        parse_number(cells[index["t"]], line_no, "t");
        std::vector<double> x, z, u;
        std::vector<bool> o;
        for (auto c : x_cols) {
            const double v = parse_number(cells[c], line_no, header[c]);
            if (std::isnan(v)) throw ParseError("state column '" + header[c] + "' is NaN", line_no);
            x.push_back(v);
        }
        for (std::size_t j = 0; j < z_cols.size(); ++j) {
            const double flag = parse_number(cells[obs_cols[j]], line_no, header[obs_cols[j]]);
            if (flag != 0.0 && flag != 1.0)
                throw ParseError("column '" + header[obs_cols[j]] + "' must be 0 or 1", line_no);
            const double v = parse_number(cells[z_cols[j]], line_no, header[z_cols[j]]);
            if (flag == 1.0 && std::isnan(v))
                throw ParseError("observed measurement '" + header[z_cols[j]] + "' is NaN", line_no);
            z.push_back(v);
            o.push_back(flag == 1.0);
        }
        for (auto c : u_cols) u.push_back(parse_number(cells[c], line_no, header[c]));
        xs.push_back(std::move(x));
        zs.push_back(std::move(z));
        obs.push_back(std::move(o));
        us.push_back(std::move(u));
    }

    const auto t = static_cast<Index>(xs.size());
    Trajectoryd traj;
    traj.states.resize(t, static_cast<Index>(x_cols.size()));
    traj.measurements.resize(t, static_cast<Index>(z_cols.size()));
    traj.mask.resize(t, static_cast<Index>(z_cols.size()));
    if (!u_cols.empty()) traj.sources.resize(t, static_cast<Index>(u_cols.size()));
    for (Index i = 0; i < t; ++i) {
        const auto r = static_cast<std::size_t>(i);
        for (Index j = 0; j < traj.k(); ++j) traj.states(i, j) = xs[r][static_cast<std::size_t>(j)];
        for (Index j = 0; j < traj.d(); ++j) {
            traj.measurements(i, j) = zs[r][static_cast<std::size_t>(j)];
            traj.mask(i, j) = obs[r][static_cast<std::size_t>(j)];
        }
        for (Index j = 0; j < traj.sources.cols(); ++j) traj.sources(i, j) = us[r][static_cast<std::size_t>(j)];
    }
    return traj;
}

Trajectoryd ingest_csv(const std::filesystem::path& path) {
    return trajectory_from_csv(read_file(path));
}

namespace {

json matrix_rows(const MatrixXd& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

MatrixXd matrix_from_rows(const json& rows, Index cols_if_empty = 0) {
    if (rows.empty()) return MatrixXd(0, cols_if_empty);
    const auto r = static_cast<Index>(rows.size());
    const auto c = static_cast<Index>(rows.at(0).size());
    MatrixXd m(r, c);
    for (Index i = 0; i < r; ++i) {
        if (static_cast<Index>(rows.at(static_cast<std::size_t>(i)).size()) != c)
            throw SchemaError("ragged matrix in fit JSON");
        for (Index j = 0; j < c; ++j)
            m(i, j) = rows.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j)).get<double>();
    }
    return m;
}

} // namespace

std::string fit_to_json(const RegressionFitd& fit) {
    json j;
    j["kind"] = std::string(to_string(fit.kind));
    j["lambdas"] = std::vector<double>(fit.lambdas.data(), fit.lambdas.data() + fit.lambdas.size());
    j["B_hat"] = matrix_rows(fit.B_hat);
    j["duals"] = matrix_rows(fit.duals);
    j["penalty_weights"] = matrix_rows(fit.penalty_weights);
    j["diagnostics"] = {{"iterations", fit.diagnostics.iterations},
                        {"kkt_residual", fit.diagnostics.kkt_residual},
                        {"converged", fit.diagnostics.converged},
                        {"objective", fit.diagnostics.objective}};
    return j.dump(2);
}

RegressionFitd fit_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        RegressionFitd fit;
        fit.kind = fit_kind_from_string(j.at("kind").get<std::string>());
        const auto lambdas = j.at("lambdas").get<std::vector<double>>();
        fit.lambdas = Eigen::Map<const VectorXd>(lambdas.data(), static_cast<Index>(lambdas.size()));
        fit.B_hat = matrix_from_rows(j.at("B_hat"));
        fit.duals = matrix_from_rows(j.value("duals", json::array()));
        fit.penalty_weights = j.contains("penalty_weights") ? matrix_from_rows(j["penalty_weights"])
                                                            : MatrixXd::Ones(fit.B_hat.rows(), fit.B_hat.cols());
        const auto& diag = j.at("diagnostics");
        fit.diagnostics.iterations = diag.value("iterations", 0L);
        fit.diagnostics.kkt_residual = diag.value("kkt_residual", 0.0);
        fit.diagnostics.converged = diag.value("converged", true);
        fit.diagnostics.objective = diag.value("objective", std::vector<double>{});
        return fit;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("fit JSON: ") + e.what());
    }
}

std::string kf_log_csv(const std::vector<KalmanState<double>>& states) {
    std::ostringstream os;
    os << "t";
    const Index k = states.empty() ? 0 : states.front().x_hat.size();
    for (Index j = 0; j < k; ++j) os << ",x_hat_" << j + 1;
    os << ",trace_P\n";
    for (const auto& s : states) {
        os << s.t;
        for (Index j = 0; j < k; ++j) os << ',' << format_double(s.x_hat(j));
        os << ',' << format_double(s.P.trace()) << '\n';
    }
    return os.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw IoError("write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace fusereg
