// Command-line front end: every verb resolves its configuration as
// defaults <- --config JSON <- explicit flags, snapshots the result into the
// run directory, and executes. Errors leave as one JSON object on stderr.
#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "ginv/experiments.hpp"

namespace {

struct CommonFlags {
    std::string config, dataset, data_dir, out;
    uint64_t seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON config file; flags override its keys");
        cmd->add_option("--dataset", dataset, "mnist or fmnist")
            ->check(CLI::IsMember({"mnist", "fmnist"}));
        cmd->add_option("--data-dir", data_dir, "directory holding mnist/ and fmnist/");
        cmd->add_option("--out", out, "run output directory");
        cmd->add_option("--seed", seed, "master seed");
    }

    ginv::ordered_json load() const {
        return config.empty() ? ginv::ordered_json::object() : ginv::read_json_file(config);
    }
};

void setup_train_gan(CLI::App& app) {
    auto* cmd = app.add_subcommand("train-gan", "Train a conditional WGAN-GP generator");
    auto common = std::make_shared<CommonFlags>();
    auto steps = std::make_shared<int64_t>(0);
    common->attach(cmd);
    cmd->add_option("--steps", *steps, "generator update count");
    cmd->callback([cmd, common, steps] {
        ginv::TrainGanSpec spec;
        const ginv::ordered_json j = common->load();
        ginv::jset(j, "dataset", spec.dataset);
        ginv::jset(j, "data_dir", spec.data_dir);
        ginv::jset(j, "out", spec.gan.out_dir);
        if (j.contains("gan")) ginv::overlay(spec.gan, j.at("gan"));
        if (cmd->count("--dataset")) spec.dataset = common->dataset;
        if (cmd->count("--data-dir")) spec.data_dir = common->data_dir;
        if (cmd->count("--out")) spec.gan.out_dir = common->out;
        if (cmd->count("--seed")) spec.gan.seed = common->seed;
        if (cmd->count("--steps")) spec.gan.generator_steps = *steps;
        auto res = ginv::run_train_gan(spec);
        std::printf("trained %lld generator steps; checkpoint: %s\n",
                    static_cast<long long>(spec.gan.generator_steps),
                    res.generator_ckpt.c_str());
    });
}

int fail_json(const std::string& type, const std::string& message) {
    ginv::ordered_json err;
    err["error"]["type"] = type;
    err["error"]["message"] = message;
    std::cerr << err.dump() << std::endl;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GAN-inversion classification and adversarial robustness harness"};
    app.require_subcommand(1);
    setup_train_gan(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        const int code = app.exit(e, std::cout, std::cerr);
        fail_json("cli", e.what());
        return code ? code : 1;
    } catch (const ginv::contract_error& e) {
        return fail_json("contract", e.what());
    } catch (const ginv::io_error& e) {
        return fail_json("io", e.what());
    } catch (const std::exception& e) {
        return fail_json("internal", e.what());
    }
    return 0;
}
