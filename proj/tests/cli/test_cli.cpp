#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

// End-to-end checks against the built executable. Every test runs the binary
// in its own scratch directory so default-config lookup and relative paths
// stay hermetic.

namespace {

using nlohmann::json;

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("dmqr_cli_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::filesystem::path write_file(const TempDir& dir, const std::string& name,
                                 const std::string& body) {
    const std::filesystem::path p = dir.path / name;
    std::ofstream out(p);
    out << body;
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const TempDir& dir, const std::string& args) {
    const std::filesystem::path out_file = dir.path / ".cli_stdout";
    const std::filesystem::path err_file = dir.path / ".cli_stderr";
    const std::string cmd = "cd '" + dir.path.string() + "' && '" DMQR_CLI_PATH "' " + args +
                            " > '" + out_file.string() + "' 2> '" + err_file.string() + "'";
    const int status = std::system(cmd.c_str());

    CliResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = slurp(out_file);
    result.err = slurp(err_file);
    std::filesystem::remove(out_file);
    std::filesystem::remove(err_file);
    return result;
}

const char* kCorpus = R"({"id": "d1", "title": "Tower Guide", "text": "the tall tower stands in the old city square"}
{"id": "d2", "title": "Museum Guide", "text": "the museum keeps paintings from the river district"}
{"id": "d3", "title": "Wall History", "text": "the famous wall divided the city for decades"}
)";

const char* kFixtures = R"({
  "Refined query:": "tall tower old city",
  "Keywords:": "tower city square",
  "Pseudo-answer:": "The tower stands in the old city square.",
  "Core content:": "tower location",
  "Rewritten query:": "tall tower old city",
  "Passage:": "The tower stands in the old city square.",
  "Variants:": "1. tall tower city\n2. tower square location\n3. old city tower",
  "Chosen strategies:": "GQR, KWR",
  "numbered context documents": "It stands in the old city square.",
  "Correct:": "yes",
  "Relevant:": "yes"
})";

const char* kDataset =
    R"({"id": "q1", "question": "where does the tower stand", "answers": ["old city square"], "gold_ids": ["d1"]}
{"id": "q2", "question": "where are the paintings kept", "answers": ["the museum"], "gold_ids": ["d2"]}
)";

/// Corpus, fixtures, dataset and a built index, ready for ask/eval runs.
struct Workspace {
    TempDir dir;

    Workspace() {
        write_file(dir, "corpus.jsonl", kCorpus);
        write_file(dir, "fixtures.json", kFixtures);
        write_file(dir, "dataset.jsonl", kDataset);
        const CliResult r = run_cli(dir, "index --corpus corpus.jsonl --out idx.bin");
        REQUIRE(r.exit_code == 0);
    }

    std::string base_args() const { return "--index idx.bin --llm-fixtures fixtures.json"; }
};

json load_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

void strip_volatile(json& j) {
    if (j.is_object()) {
        j.erase("timings");
        j.erase("wall_ms");
        j.erase("latency_ms");
        j.erase("start_ms");
        j.erase("end_ms");
        for (auto& [key, value] : j.items()) {
            strip_volatile(value);
        }
    } else if (j.is_array()) {
        for (json& value : j) {
            strip_volatile(value);
        }
    }
}

}  // namespace

TEST_CASE("index reports document and vocabulary counts") {
    TempDir dir;
    write_file(dir, "corpus.jsonl", kCorpus);
    const CliResult r = run_cli(dir, "index --corpus corpus.jsonl --out idx.bin");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("3 documents") != std::string::npos);
    CHECK(std::filesystem::exists(dir.path / "idx.bin"));
}

TEST_CASE("index names the offending corpus line") {
    TempDir dir;
    write_file(dir, "corpus.jsonl", "{\"id\": \"d1\", \"text\": \"fine\"}\nnot json\n");
    const CliResult r = run_cli(dir, "index --corpus corpus.jsonl --out idx.bin");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("index rejects an empty corpus as a data error") {
    TempDir dir;
    write_file(dir, "corpus.jsonl", "");
    const CliResult r = run_cli(dir, "index --corpus corpus.jsonl --out idx.bin");
    CHECK(r.exit_code == 1);
}

TEST_CASE("rewrite prints one tagged line per requested strategy") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "rewrite \"where does the tower stand\" --strategies gqr,par "
                "--llm-fixtures fixtures.json");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("GQR: tall tower old city") != std::string::npos);
    CHECK(r.out.find("PAR: The tower stands in the old city square.") != std::string::npos);
    CHECK(r.out.find("KWR:") == std::string::npos);
}

TEST_CASE("rewrite rejects unknown strategy ids and lists the pool") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "rewrite \"anything\" --strategies nope --llm-fixtures fixtures.json");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("NOPE") != std::string::npos);
    CHECK(r.err.find("GQR, KWR, PAR, CCE") != std::string::npos);
}

TEST_CASE("rewrite --adaptive reports the selector's picks") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "rewrite \"where does the tower stand\" --adaptive "
                "--llm-fixtures fixtures.json");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("Selected strategies: GQR, KWR") != std::string::npos);
    CHECK(r.out.find("GQR: ") != std::string::npos);
    CHECK(r.out.find("KWR: ") != std::string::npos);
    CHECK(r.out.find("PAR: ") == std::string::npos);
}

TEST_CASE("ask answers from the local index and writes the trace") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "ask \"where does the tower stand\" " + ws.base_args() +
                    " --trace-out trace.json");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("It stands in the old city square.") != std::string::npos);
    CHECK(r.out.find("Sources:") != std::string::npos);

    const json trace = load_json(ws.dir.path / "trace.json");
    CHECK(trace["retrievals"].size() == 5);
    CHECK(trace["retrievals"][0]["strategy"] == "ORIGINAL");
    CHECK(trace["rewrites"].size() == 4);
    CHECK(trace["answer"]["text"] == "It stands in the old city square.");
}

TEST_CASE("ask --method oqr retrieves exactly once") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "ask \"where does the tower stand\" --method oqr " + ws.base_args() +
                    " --trace-out trace.json");
    CHECK(r.exit_code == 0);
    const json trace = load_json(ws.dir.path / "trace.json");
    CHECK(trace["retrievals"].size() == 1);
    CHECK(trace["rewrites"].empty());
}

TEST_CASE("ask without an index is a dependency error") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "ask \"anything\" --index missing.bin --llm-fixtures fixtures.json");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("missing.bin") != std::string::npos);
}

TEST_CASE("ask without any language model is a dependency error") {
    Workspace ws;
    const CliResult r = run_cli(ws.dir, "ask \"anything\" --index idx.bin");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("no language model configured") != std::string::npos);
}

TEST_CASE("ask with a blank question is a data error") {
    Workspace ws;
    const CliResult r = run_cli(ws.dir, "ask \"   \" " + ws.base_args());
    CHECK(r.exit_code == 1);
}

TEST_CASE("eval writes a report and prints the metrics table") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "eval --dataset dataset.jsonl --method oqr " + ws.base_args() +
                    " --out report.json");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("h@5") != std::string::npos);
    CHECK(r.out.find("OQR") != std::string::npos);

    const json report = load_json(ws.dir.path / "report.json");
    CHECK(report["config"]["method"] == "OQR");
    CHECK(report["rows"].size() == 2);
    CHECK(report["rows"][0]["id"] == "q1");
}

TEST_CASE("eval --method all compares every method") {
    Workspace ws;
    const CliResult r = run_cli(
        ws.dir, "eval --dataset dataset.jsonl --method all " + ws.base_args() +
                    " --out report.json");
    CHECK(r.exit_code == 0);
    for (const char* name :
         {"OQR", "REWRITE", "HYDE", "RAG_FUSION", "DMQR", "DMQR_ADAPTIVE"}) {
        CHECK(r.out.find(name) != std::string::npos);
    }
    const json report = load_json(ws.dir.path / "report.json");
    REQUIRE(report.is_array());
    CHECK(report.size() == 6);
}

TEST_CASE("eval without the dataset is a data error") {
    Workspace ws;
    const CliResult r = run_cli(ws.dir, "eval --dataset missing.jsonl " + ws.base_args());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("missing.jsonl") != std::string::npos);
}

TEST_CASE("cache stats and clear round-trip through ask") {
    Workspace ws;
    const std::string cached = ws.base_args() + " --cache-dir searchcache";

    CliResult stats = run_cli(ws.dir, "cache stats --cache-dir searchcache --json");
    REQUIRE(stats.exit_code == 0);
    CHECK(json::parse(stats.out)["entries"] == 0);

    REQUIRE(run_cli(ws.dir, "ask \"where does the tower stand\" " + cached).exit_code == 0);
    stats = run_cli(ws.dir, "cache stats --cache-dir searchcache --json");
    const auto entries = json::parse(stats.out)["entries"].get<int>();
    CHECK(entries == 5);

    const CliResult cleared = run_cli(ws.dir, "cache clear --cache-dir searchcache --json");
    CHECK(json::parse(cleared.out)["removed"] == entries);
    stats = run_cli(ws.dir, "cache stats --cache-dir searchcache --json");
    CHECK(json::parse(stats.out)["entries"] == 0);
}

TEST_CASE("cache commands without a configured directory fail") {
    TempDir dir;
    const CliResult r = run_cli(dir, "cache stats");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("cache_dir") != std::string::npos);
}

TEST_CASE("show-config redacts secrets") {
    TempDir dir;
    const CliResult r =
        run_cli(dir, "--show-config --llm-key shhh --set search_key=alsoshhh");
    REQUIRE(r.exit_code == 0);
    const json cfg = json::parse(r.out);
    CHECK(cfg["llm_key"] == "<redacted>");
    CHECK(cfg["search_key"] == "<redacted>");
    CHECK(r.out.find("shhh") == std::string::npos);
}

TEST_CASE("a dmqr.json in the working directory supplies defaults") {
    Workspace ws;
    write_file(ws.dir, "dmqr.json",
               R"({"index_path": "idx.bin", "llm_fixtures": "fixtures.json", "k": 2})");
    const CliResult r =
        run_cli(ws.dir, "ask \"where does the tower stand\" --trace-out trace.json");
    CHECK(r.exit_code == 0);
    const json trace = load_json(ws.dir.path / "trace.json");
    CHECK(trace["context"].size() == 2);
}

TEST_CASE("repeated runs are byte-identical apart from timings") {
    Workspace ws;
    const std::string args = "ask \"where does the tower stand\" " + ws.base_args();

    const CliResult first = run_cli(ws.dir, args + " --trace-out t1.json");
    const CliResult second = run_cli(ws.dir, args + " --trace-out t2.json");
    REQUIRE(first.exit_code == 0);
    REQUIRE(second.exit_code == 0);
    CHECK(first.out == second.out);

    json t1 = load_json(ws.dir.path / "t1.json");
    json t2 = load_json(ws.dir.path / "t2.json");
    strip_volatile(t1);
    strip_volatile(t2);
    CHECK(t1 == t2);
}

TEST_CASE("unknown settings are named in the error") {
    TempDir dir;
    const CliResult r = run_cli(dir, "--show-config --set tipo=3");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("tipo") != std::string::npos);
}

int main(int argc, char** argv) {
    // The resolver reads DMQR_* variables; scrub them so ambient shell state
    // cannot leak into the assertions.
    for (const char* var : {"DMQR_LLM_URL", "DMQR_LLM_KEY", "DMQR_LLM_MODEL",
                            "DMQR_SEARCH_URL", "DMQR_SEARCH_KEY", "DMQR_CACHE_DIR"}) {
        unsetenv(var);
    }
    return doctest::Context(argc, argv).run();
}
