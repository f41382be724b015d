/**
 * End-to-end round trip against the real Python annotation service.
 *
 * Gated behind RUN_SERVICE_TESTS=1 (`npm run test:integration`) because it
 * spawns the backend via python3/uvicorn. Drives the same client code the
 * browser UI uses: draw a rectangle mask, pick winner/loser, submit, then
 * verify the manifest record, the stored mask bytes, and the latent-scale
 * downsample against hand-computed expectations.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { MaskRaster, downsampleMask } from "../src/mask.js";
import { decodeGrayPng, encodeGrayPng } from "./helpers/pngNode.js";

const RUN = process.env.RUN_SERVICE_TESTS === "1";
const SIZE = 64;
const PORT = 8731 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

const MAKE_ROOT_PY = `
import json, sys
import numpy as np
from PIL import Image
from pathlib import Path

root = Path(sys.argv[1])
size = int(sys.argv[2])
rng = np.random.default_rng(0)
index = {"pairs": {}}
for pid in ("0000", "0001"):
    (root / pid).mkdir(parents=True, exist_ok=True)
    (root / "sources").mkdir(exist_ok=True)
    for role in ("ir", "vis"):
        Image.fromarray(rng.integers(0, 256, (size, size), dtype=np.uint8), "L").save(
            root / f"sources/{pid}_{role}.png")
    cands = []
    for i in range(3):
        rel = f"{pid}/cand_{i}.png"
        Image.fromarray(rng.integers(0, 256, (size, size), dtype=np.uint8), "L").save(root / rel)
        cands.append({"file": rel,
                      "prompt_kind": "general" if i == 0 else "property",
                      "level": None if i == 0 else i - 1})
    index["pairs"][pid] = {"ir": f"sources/{pid}_ir.png",
                           "vis": f"sources/{pid}_vis.png",
                           "candidates": cands}
(root / "index.json").write_text(json.dumps(index))
`;

describe.skipIf(!RUN)("A12: UI round trip through the live service", () => {
  let workDir: string;
  let server: ChildProcess;

  beforeAll(async () => {
    workDir = fs.mkdtempSync(path.join(os.tmpdir(), "a12-"));
    const made = spawnSync("python3", ["-c", MAKE_ROOT_PY, workDir, String(SIZE)], {
      encoding: "utf8",
    });
    if (made.status !== 0) throw new Error(`candidate setup failed: ${made.stderr}`);

    server = spawn(
      "python3",
      ["-c", `from fusionpref.service import serve; serve(${JSON.stringify(workDir)}, None, "127.0.0.1:${PORT}")`],
      { stdio: ["ignore", "pipe", "pipe"] },
    );
    let stderr = "";
    server.stderr!.on("data", (d) => (stderr += d));

    const deadline = Date.now() + 30_000;
    for (;;) {
      if (server.exitCode !== null) throw new Error(`service exited early: ${stderr}`);
      try {
        const res = await fetch(`${BASE}/api/pairs`);
        if (res.ok) break;
      } catch {
        // not up yet
      }
      if (Date.now() > deadline) throw new Error(`service never came up: ${stderr}`);
      await new Promise((r) => setTimeout(r, 250));
    }
  }, 40_000);

  afterAll(() => {
    server?.kill();
    if (workDir) fs.rmSync(workDir, { recursive: true, force: true });
  });

  it("submits a rectangle mask and round-trips it bit-exactly", async () => {
    const api = new ApiClient(BASE);

    const pairs = await api.listPairs();
    expect(pairs.map((p) => p.pair_id)).toEqual(["0000", "0001"]);
    const detail = await api.getPair("0000");
    expect(detail.candidates).toHaveLength(3);
    expect(detail.candidates[0].prompt_kind).toBe("general");

    // the exact gesture the UI performs: rectangle region, winner then loser
    const mask = new MaskRaster(SIZE, SIZE);
    mask.fillRect(8, 16, 24, 16);
    const png = encodeGrayPng(mask.toGray(), SIZE, SIZE);
    await api.submitPreference("0000", 2, 0, "integration", new Blob([png], { type: "image/png" }));

    // exactly one manifest record, pointing at the files we chose
    const lines = (await api.exportManifest()).trim().split("\n");
    expect(lines).toHaveLength(1);
    const record = JSON.parse(lines[0]);
    expect(record.pair_id).toBe("0000");
    expect(record.source).toBe("human");
    expect(record.annotator).toBe("integration");
    expect(record.winner_path.endsWith("0000/cand_2.png")).toBe(true);
    expect(record.loser_path.endsWith("0000/cand_0.png")).toBe(true);

    // stored mask PNG decodes to the rectangle, pixel for pixel
    const maskRes = await fetch(`${BASE}/api/images/${record.mask_path}`);
    expect(maskRes.ok).toBe(true);
    const decoded = decodeGrayPng(new Uint8Array(await maskRes.arrayBuffer()));
    expect(decoded.width).toBe(SIZE);
    expect(decoded.height).toBe(SIZE);
    const stored = MaskRaster.fromGray(decoded.gray, decoded.width, decoded.height);
    expect(stored.equals(mask)).toBe(true);

    // latent-scale view matches the hand-computed downsample of the rectangle
    const latent = downsampleMask(stored, 4);
    expect(latent.width).toBe(SIZE / 4);
    for (let y = 0; y < latent.height; y++) {
      for (let x = 0; x < latent.width; x++) {
        const expected = x >= 2 && x < 8 && y >= 4 && y < 8 ? 1 : 0;
        expect(latent.at(x, y)).toBe(expected);
      }
    }
  }, 30_000);

  it("rejects a duplicate submission with 409 and leaves one record", async () => {
    const api = new ApiClient(BASE);
    const mask = new MaskRaster(SIZE, SIZE);
    mask.fillAll();
    const png = encodeGrayPng(mask.toGray(), SIZE, SIZE);
    const err = await api
      .submitPreference("0000", 1, 0, "integration", new Blob([png], { type: "image/png" }))
      .catch((e) => e);
    expect(err.status).toBe(409);
    expect(err.code).toBe("already_annotated");
    const lines = (await api.exportManifest()).trim().split("\n");
    expect(lines).toHaveLength(1);
  });
});
