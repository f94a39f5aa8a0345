#ifndef MRN_CLI_HPP
#define MRN_CLI_HPP

namespace mrn {

// Entry point for the command-line tool (synth / train / eval / predict /
// gradcheck). Returns the process exit code: 0 success, 2 usage or
// configuration error, 3 numerical failure.
int run_cli(int argc, const char* const* argv);

}  // namespace mrn

#endif  // MRN_CLI_HPP
