#include <dsnerv/cli.hpp>

int main(int argc, char** argv) { return dsnerv::cli::run(argc, argv); }
