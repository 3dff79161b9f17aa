#pragma once

namespace klpc::cli {

// Entry point of the klpc tool. Returns 0 on success, 1 on usage or
// configuration errors, 2 on runtime numerical errors.
int run(int argc, char** argv);

}  // namespace klpc::cli
