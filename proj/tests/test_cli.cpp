#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        static std::atomic<int> counter{0};
        dir_ = fs::temp_directory_path() /
               ("backoff_lab_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, const std::string& text) const
    {
        const auto p = dir_ / name;
        std::ofstream(p) << text;
        return p;
    }

    // Runs the CLI with stdout captured to a file; returns the exit status.
    int cli(const std::string& args, std::string* out = nullptr) const
    {
        const auto log = dir_ / "stdout.txt";
        const std::string cmd = std::string(BACKOFF_LAB_CLI) + " " + args + " > " + log.string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        if (out)
            *out = slurp(log);
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    static std::string slurp(const fs::path& p)
    {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    }

    // Data rows of a CSV: skips comment lines and the header.
    static std::vector<std::vector<std::string>> rows(const std::string& text)
    {
        std::vector<std::vector<std::string>> out;
        std::istringstream is(text);
        std::string line;
        bool header = true;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#')
                continue;
            if (header) {
                header = false;
                continue;
            }
            std::vector<std::string> cells;
            std::istringstream ls(line);
            std::string cell;
            while (std::getline(ls, cell, ','))
                cells.push_back(cell);
            out.push_back(cells);
        }
        return out;
    }

    fs::path dir_;
};

const char* kMinimal = R"(scenario:
  stations: 3
  duration_slots: 100000
  seed: 5
  policy: {kind: standard, r: 2.0}
)";

const char* kAdapt = R"(scenario:
  stations: 4
  duration_slots: 1200000
  seed: 3
  policy: {kind: penalty, r: 1.5}
  traffic: {on_off_stations: [2, 3], period_slots: 200000}
adapt: {estimator: ratio, epsilon: 0.8, interval_slots: 20000}
)";

} // namespace

TEST_F(CliTest, SimulateWritesTraceWithSuccesses)
{
    const auto cfg = write("min.yaml", kMinimal);
    ASSERT_EQ(cli("simulate --config " + cfg.string() + " --out " + (dir_ / "a").string()), 0);
    const auto trace = slurp(dir_ / "a" / "trace.csv");
    EXPECT_EQ(trace.rfind("#config-hash ", 0), 0u);
    EXPECT_NE(trace.find("slot,station,outcome,retry,cw,bytes"), std::string::npos);
    int successes = 0;
    for (const auto& r : rows(trace))
        successes += r.at(2) == "success";
    EXPECT_GE(successes, 1);
    EXPECT_TRUE(fs::exists(dir_ / "a" / "summary.json"));
}

TEST_F(CliTest, SimulateIsByteIdentical)
{
    const auto cfg = write("sweep.yaml", std::string(kMinimal) + "sweep: [1.5, 2.0]\n");
    for (const char* d : {"a", "b"})
        ASSERT_EQ(cli("simulate --config " + cfg.string() + " --out " + (dir_ / d).string()), 0);
    for (const char* f : {"trace.csv", "summary.json", "sweep.csv"})
        EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
    EXPECT_EQ(rows(slurp(dir_ / "a" / "sweep.csv")).size(), 2u);

    ASSERT_EQ(cli("simulate --config " + cfg.string() + " --seed 9 --out " + (dir_ / "c").string()), 0);
    EXPECT_NE(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "c" / "trace.csv"));
}

TEST_F(CliTest, SimulateJsonFormat)
{
    const auto cfg = write("min.yaml", kMinimal);
    ASSERT_EQ(cli("simulate --config " + cfg.string() + " --r 1.5,2.5 --format json --out " + (dir_ / "j").string()),
              0);
    const auto text = slurp(dir_ / "j" / "sweep.json");
    EXPECT_NE(text.find("\"config_hash\""), std::string::npos);
    EXPECT_NE(text.find("\"rows\""), std::string::npos);
}

TEST_F(CliTest, BadFactorExitsTwoNamingField)
{
    const auto cfg = write("bad.yaml", "scenario:\n  stations: 3\n  duration_slots: 1000\n  policy: {kind: standard, r: 0.5}\n");
    std::string out;
    EXPECT_EQ(cli("simulate --config " + cfg.string() + " --out " + (dir_ / "x").string(), &out), 2);
    EXPECT_NE(out.find("scenario.policy.r"), std::string::npos) << out;
    EXPECT_EQ(cli("simulate --config " + (dir_ / "missing.yaml").string()), 2);
    EXPECT_EQ(cli("frobnicate"), 2);
}

TEST_F(CliTest, SolveTable)
{
    std::string out;
    ASSERT_EQ(cli("solve", &out), 0);
    const auto table = rows(out);
    ASSERT_EQ(table.size(), 11u);
    EXPECT_EQ(table.front().at(0), "2");
    EXPECT_EQ(table.back().at(0), "12");

    ASSERT_EQ(cli("solve --n 5..5", &out), 0);
    ASSERT_EQ(rows(out).size(), 1u);
    const double r5 = std::stod(rows(out)[0].at(2));

    ASSERT_EQ(cli("solve --n 5..5 --tc 3.66e-4", &out), 0);
    EXPECT_GT(std::stod(rows(out)[0].at(2)), r5);

    ASSERT_EQ(cli("solve --n 2..4 --out " + (dir_ / "s").string()), 0);
    EXPECT_EQ(rows(slurp(dir_ / "s" / "optima.csv")).size(), 3u);
    EXPECT_EQ(cli("solve --n 12..2"), 2);
}

TEST_F(CliTest, MetricsFromSimulatedTrace)
{
    const auto cfg = write("twelve.yaml", "scenario:\n  stations: 12\n  duration_slots: 300000\n  policy: {kind: standard}\n");
    ASSERT_EQ(cli("simulate --config " + cfg.string() + " --out " + (dir_ / "sim").string()), 0);
    const auto trace = (dir_ / "sim" / "trace.csv").string();
    ASSERT_EQ(cli("metrics --trace " + trace + " --beacon-synth --out " + (dir_ / "m").string()), 0);
    for (const char* f : {"jain.csv", "collisions.csv", "throughput.csv", "bins.csv", "metrics.json"})
        EXPECT_TRUE(fs::exists(dir_ / "m" / f)) << f;
    const auto m = slurp(dir_ / "m" / "metrics.json");
    EXPECT_NE(m.find("\"window\": 120"), std::string::npos);

    ASSERT_EQ(cli("metrics --trace " + trace + " --beacon-synth --window 60 --out " + (dir_ / "w").string()), 0);
    EXPECT_NE(slurp(dir_ / "w" / "metrics.json").find("\"window\": 60"), std::string::npos);
    EXPECT_GT(rows(slurp(dir_ / "w" / "jain.csv")).size(), rows(slurp(dir_ / "m" / "jain.csv")).size());
    for (const auto& r : rows(slurp(dir_ / "m" / "jain.csv"))) {
        const double f = std::stod(r.at(1));
        EXPECT_GE(f, 1.0 / 12 - 1e-12);
        EXPECT_LE(f, 1.0 + 1e-12);
    }
}

TEST_F(CliTest, MetricsUsageErrors)
{
    EXPECT_EQ(cli("metrics --trace " + (dir_ / "nope.csv").string() + " --beacon-synth"), 2);
    const auto cfg = write("min.yaml", kMinimal);
    ASSERT_EQ(cli("simulate --config " + cfg.string() + " --out " + (dir_ / "sim").string()), 0);
    // beacon source is mandatory
    EXPECT_EQ(cli("metrics --trace " + (dir_ / "sim" / "trace.csv").string()), 2);
}

TEST_F(CliTest, AdaptAlternatesAndCompares)
{
    const auto cfg = write("adapt.yaml", kAdapt);
    ASSERT_EQ(cli("adapt --config " + cfg.string() + " --out " + (dir_ / "a").string()), 0);
    const auto updates = rows(slurp(dir_ / "a" / "updates.csv"));
    ASSERT_GE(updates.size(), 3u);
    std::set<std::string> values;
    for (std::size_t k = 0; k < updates.size(); ++k) {
        values.insert(updates[k].at(2));
        EXPECT_EQ(std::stoull(updates[k].at(1)), k + 1);
        if (k > 0) {
            EXPECT_NE(updates[k].at(2), updates[k - 1].at(2));
        }
    }
    EXPECT_EQ(values, (std::set<std::string>{"2", "4"}));

    const auto cmp = rows(slurp(dir_ / "a" / "comparison.csv"));
    ASSERT_EQ(cmp.size(), 2u);
    EXPECT_EQ(cmp[0].at(0), "standard_r2");
    EXPECT_EQ(cmp[1].at(0), "penalty_adaptive");
    EXPECT_TRUE(fs::exists(dir_ / "a" / "summary.json"));
}

TEST_F(CliTest, AdaptThresholdAboveEveryShareClampsToOne)
{
    const auto cfg = write("adapt.yaml", kAdapt);
    ASSERT_EQ(cli("adapt --config " + cfg.string() + " --estimator threshold --tau 0.99 --out " + (dir_ / "t").string()),
              0);
    const auto updates = rows(slurp(dir_ / "t" / "updates.csv"));
    ASSERT_EQ(updates.size(), 1u);
    EXPECT_EQ(updates[0].at(2), "1");
    // threshold without tau is a configuration error
    EXPECT_EQ(cli("adapt --config " + cfg.string() + " --estimator threshold --out " + (dir_ / "u").string()), 2);
}

TEST_F(CliTest, AdaptRejectsStandardStations)
{
    const auto cfg = write("min.yaml", kMinimal);
    EXPECT_EQ(cli("adapt --config " + cfg.string() + " --out " + (dir_ / "z").string()), 2);
}
