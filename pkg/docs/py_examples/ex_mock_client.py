from gvgaiLlmTools.llmClient import load_mock_script

server = load_mock_script("mock_script.json", transcript_path="transcript.jsonl")
client = server.client()

reply, usage = client.complete("rules", "Avatar position: row=1, col=3")
print(reply, usage)
