// SMT-LIB 2 front end over the z3 WebAssembly build.
//
// Reads statements line by line on stdin.  Each "(check-sat)" line closes a
// script, which is evaluated in a fresh context; the result (sat / unsat /
// unknown) is written as one line on stdout.  "(reset)" discards the buffer,
// "(exit)" terminates.  Usage: node z3wasm.js [timeout-ms]

"use strict";

const { init } = require("z3-solver");
const readline = require("readline");

const timeoutMs = parseInt(process.argv[2] || "0", 10);

init().then(({ Z3 }) => {
  if (timeoutMs > 0) {
    Z3.global_param_set("timeout", String(timeoutMs));
  }
  let buf = [];
  let queue = Promise.resolve();
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    const t = line.trim();
    if (t === "(exit)") {
      queue.then(() => process.exit(0));
      return;
    }
    if (t === "(reset)") {
      buf = [];
      return;
    }
    buf.push(line);
    if (t === "(check-sat)") {
      const script = buf.join("\n");
      buf = [];
      queue = queue.then(async () => {
        let out;
        try {
          const cfg = Z3.mk_config();
          const ctx = Z3.mk_context(cfg);
          try {
            out = (await Z3.eval_smtlib2_string(ctx, script)).trim();
          } finally {
            Z3.del_context(ctx);
            Z3.del_config(cfg);
          }
        } catch (e) {
          out = "error: " + ((e && e.message) || String(e));
        }
        const lines = out.split("\n").filter((l) => l.trim() !== "");
        process.stdout.write((lines[lines.length - 1] || "error") + "\n");
      });
    }
  });
  rl.on("close", () => queue.then(() => process.exit(0)));
}).catch((e) => {
  process.stderr.write("failed to initialise z3: " + e + "\n");
  process.exit(1);
});
