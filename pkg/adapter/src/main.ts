import { createInterface } from 'readline';
import { createServer } from 'net';
import { AdapterSession } from './session.js';
import { EchoTracker } from './tracker.js';

function serveStdio(): void {
  const session = new AdapterSession(new EchoTracker());
  const rl = createInterface({ input: process.stdin, terminal: false });
  rl.on('line', (line) => {
    if (line.trim() === '') return;
    const handled = session.handleLine(line);
    if (handled.response !== undefined) {
      process.stdout.write(handled.response + '\n');
    }
    if (handled.close) {
      rl.close();
      process.exit(0);
    }
  });
  rl.on('close', () => process.exit(0));
}

function serveTcp(port: number): void {
  const server = createServer((socket) => {
    const session = new AdapterSession(new EchoTracker());
    const rl = createInterface({ input: socket, terminal: false });
    rl.on('line', (line) => {
      if (line.trim() === '') return;
      const handled = session.handleLine(line);
      if (handled.response !== undefined) {
        socket.write(handled.response + '\n');
      }
      if (handled.close) {
        socket.end();
      }
    });
    socket.on('error', () => socket.destroy());
  });
  server.listen(port, () => {
    process.stderr.write(`adapter listening on :${port}\n`);
  });
}

const args = process.argv.slice(2);
const tcpIdx = args.indexOf('--tcp');
if (tcpIdx >= 0) {
  const port = Number(args[tcpIdx + 1]);
  if (!Number.isInteger(port) || port <= 0) {
    process.stderr.write('usage: main.js [--tcp PORT]\n');
    process.exit(2);
  }
  serveTcp(port);
} else {
  serveStdio();
}
